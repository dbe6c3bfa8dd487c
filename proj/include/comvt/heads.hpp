#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "comvt/layers.hpp"
#include "comvt/params.hpp"
#include "comvt/text.hpp"

namespace comvt {

/// Candidate pool U with the index of the true next utterance (0-based).
struct CandidateSet {
  std::vector<std::string> utterances;
  std::size_t true_index = 0;

  std::size_t size() const { return utterances.size(); }
  /// M >= 1, index in range, no negative equal to the true utterance.
  void validate() const;
};

/// Unnormalized scores e . g_cand(u_i): rows of `pooled` against rows of
/// `candidates` (plain dot product).
Tensor nup_logits(const Tensor& pooled, const Tensor& candidates);

/// P(u_i | e, U): softmax over candidates of the plain dot products.
Tensor nup_scores(const Tensor& pooled, const Tensor& candidates);

/// -log P(u_T). Probabilities below 1e-30 are clamped; each clamp bumps
/// `clamp_count` when given.
Tensor nup_loss(const Tensor& probabilities, std::size_t true_index, std::size_t* clamp_count = nullptr);

/// Training-time NUP loss with in-batch candidates: row b of `pooled` should
/// select candidate `targets[b]`. Mean over rows of -log softmax.
Tensor in_batch_nup_loss(const Tensor& pooled, const Tensor& candidates, std::span<const std::size_t> targets);

/// Deduplicates the batch's true utterances. Returns the pool (first
/// occurrence order) and each example's index into it.
std::pair<std::vector<std::string>, std::vector<std::size_t>> in_batch_pool(std::span<const std::string> futures);

/// Untied linear projection from model dim to vocabulary logits.
class MlmHead {
 public:
  MlmHead() = default;
  MlmHead(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t vocab_size, SeededRng& rng)
      : projection_(store, name + ".projection", d_model, vocab_size, rng) {}

  Tensor operator()(const Tensor& states) const { return projection_(states); }
  const Linear& projection() const { return projection_; }

 private:
  Linear projection_;
};

/// Mean cross-entropy over the planned positions; a zero scalar for an empty plan.
Tensor mlm_loss(const Tensor& text_states, const MaskingPlan& plan, const MlmHead& head);

/// Batch version: mean over every planned position of every example.
Tensor mlm_loss(std::span<const Tensor> text_states, std::span<const MaskingPlan> plans, const MlmHead& head);

/// Two-layer softmax classifier for next-step prediction.
class NspHead {
 public:
  NspHead() = default;
  NspHead(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t hidden,
          std::size_t classes, SeededRng& rng)
      : mlp_(store, name, d_model, hidden, classes, rng), classes_(classes) {}

  std::size_t classes() const { return classes_; }
  const Mlp2& mlp() const { return mlp_; }

 private:
  Mlp2 mlp_;
  std::size_t classes_ = 0;
};

Tensor nsp_logits(const Tensor& pooled, const NspHead& head);
Tensor nsp_loss(const Tensor& pooled, std::span<const std::size_t> classes, const NspHead& head);

/// Text input for QA: transcript followed by the question, or the question
/// alone when there is no speech.
std::string qa_input_text(std::string_view transcript, std::string_view question);

/// Exact-string deduplication preserving first occurrence.
std::vector<std::string> build_answer_pool(std::span<const std::string> answers);

/// Indices sorted by descending score; ties go to the lower index.
std::vector<std::size_t> rank_descending(std::span<const double> scores);

}  // namespace comvt
