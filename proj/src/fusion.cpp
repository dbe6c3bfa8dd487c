#include "comvt/fusion.hpp"

#include "comvt/error.hpp"

namespace comvt {

CoTrmBlock::CoTrmBlock(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t heads,
                       std::size_t ffn_dim, SeededRng& rng) {
  const TrmConfig cross{d_model, heads, ffn_dim, true};
  const TrmConfig self{d_model, heads, ffn_dim, false};
  visual_cross_ = TrmBlock(store, name + ".visual_cross", cross, rng);
  visual_self_ = TrmBlock(store, name + ".visual_self", self, rng);
  text_cross_ = TrmBlock(store, name + ".text_cross", cross, rng);
  text_self_ = TrmBlock(store, name + ".text_self", self, rng);
}

std::pair<Tensor, Tensor> CoTrmBlock::operator()(const Tensor& visual, const Tensor& text,
                                                 const StreamMasks& masks) const {
  if (!visual.defined() || !text.defined() || visual.rows() == 0 || text.rows() == 0) {
    throw ContractError("cotrm_block: both streams must be non-empty");
  }
  const Tensor visual_hat = visual_cross_(visual, text, masks.text);
  const Tensor visual_out = visual_self_(visual_hat, visual_hat, masks.visual);
  const Tensor text_hat = text_cross_(text, visual, masks.visual);
  const Tensor text_out = text_self_(text_hat, text_hat, masks.text);
  return {visual_out, text_out};
}

CoTrmStack::CoTrmStack(ParamStore& store, const std::string& name, std::size_t depth, std::size_t d_model,
                       std::size_t heads, std::size_t ffn_dim, SeededRng& rng) {
  for (std::size_t s = 0; s < depth; ++s) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(s), d_model, heads, ffn_dim, rng);
  }
}

std::pair<Tensor, Tensor> CoTrmStack::operator()(const Tensor& visual, const Tensor& text,
                                                 const StreamMasks& masks) const {
  std::pair<Tensor, Tensor> state{visual, text};
  for (const auto& block : blocks_) state = block(state.first, state.second, masks);
  return state;
}

}  // namespace comvt
