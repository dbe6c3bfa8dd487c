#include "comvt/heads.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "comvt/error.hpp"

namespace comvt {

void CandidateSet::validate() const {
  if (utterances.empty()) throw ContractError("candidate set is empty");
  if (true_index >= utterances.size()) throw ContractError("candidate set: true index out of range");
  const auto& truth = utterances[true_index];
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (i != true_index && utterances[i] == truth) {
      throw ContractError("candidate set: negative duplicates the true utterance");
    }
  }
}

Tensor nup_logits(const Tensor& pooled, const Tensor& candidates) {
  if (!candidates.defined() || candidates.rows() == 0) throw ContractError("nup: empty candidate set");
  if (pooled.cols() != candidates.cols()) throw ContractError("nup: pooled and candidate dims differ");
  return matmul_nt(pooled, candidates);
}

Tensor nup_scores(const Tensor& pooled, const Tensor& candidates) {
  return softmax(nup_logits(pooled, candidates), 1);
}

Tensor nup_loss(const Tensor& probabilities, std::size_t true_index, std::size_t* clamp_count) {
  if (probabilities.size() == 0) throw ContractError("nup_loss: empty candidate set");
  if (probabilities.rank() != 2 || probabilities.rows() != 1) {
    throw ContractError("nup_loss: expected a 1 x M probability row");
  }
  if (true_index >= probabilities.size()) throw ContractError("nup_loss: true index out of range");
  constexpr double kFloor = 1e-30;
  if (probabilities[true_index] < kFloor) {
    if (clamp_count) ++*clamp_count;
    return Tensor::scalar(-std::log(kFloor));
  }
  return scale(log(slice_cols(probabilities, true_index, true_index + 1)), -1.0);
}

Tensor in_batch_nup_loss(const Tensor& pooled, const Tensor& candidates, std::span<const std::size_t> targets) {
  return cross_entropy(nup_logits(pooled, candidates), targets);
}

std::pair<std::vector<std::string>, std::vector<std::size_t>> in_batch_pool(std::span<const std::string> futures) {
  std::vector<std::string> pool;
  std::vector<std::size_t> targets;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& f : futures) {
    auto [it, inserted] = seen.emplace(f, pool.size());
    if (inserted) pool.push_back(f);
    targets.push_back(it->second);
  }
  return {std::move(pool), std::move(targets)};
}

Tensor mlm_loss(const Tensor& text_states, const MaskingPlan& plan, const MlmHead& head) {
  return mlm_loss(std::span<const Tensor>(&text_states, 1), std::span<const MaskingPlan>(&plan, 1), head);
}

Tensor mlm_loss(std::span<const Tensor> text_states, std::span<const MaskingPlan> plans, const MlmHead& head) {
  if (text_states.size() != plans.size()) throw ContractError("mlm_loss: one plan per example required");
  std::vector<Tensor> rows;
  std::vector<std::size_t> targets;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    if (plans[b].empty()) continue;
    for (std::size_t k = 0; k < plans[b].positions.size(); ++k) {
      if (plans[b].positions[k] >= text_states[b].rows()) throw ContractError("mlm_loss: position out of range");
      targets.push_back(static_cast<std::size_t>(plans[b].targets[k]));
    }
    rows.push_back(gather_rows(text_states[b], plans[b].positions));
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  const Tensor selected = rows.size() == 1 ? rows.front() : concat_rows(rows);
  return cross_entropy(head(selected), targets);
}

Tensor nsp_logits(const Tensor& pooled, const NspHead& head) { return head.mlp()(pooled); }

Tensor nsp_loss(const Tensor& pooled, std::span<const std::size_t> classes, const NspHead& head) {
  return cross_entropy(nsp_logits(pooled, head), classes);
}

std::string qa_input_text(std::string_view transcript, std::string_view question) {
  if (transcript.find_first_not_of(" \t\r\n") == std::string_view::npos) return std::string(question);
  std::string out(transcript);
  out += ' ';
  out += question;
  return out;
}

std::vector<std::string> build_answer_pool(std::span<const std::string> answers) {
  std::vector<std::string> pool;
  std::unordered_set<std::string> seen;
  for (const auto& a : answers)
    if (seen.insert(a).second) pool.push_back(a);
  return pool;
}

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace comvt
