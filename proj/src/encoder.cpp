#include "fmpestf/encoder.hpp"

#include "fmpestf/errors.hpp"

namespace fmpestf {

std::pair<Var, Var> split(Var h) {
  const Shape& s = h.shape();
  if (s.empty() || s.back() == 0 || s.back() % 2 != 0) {
    throw ContractError("split needs an even, nonzero time length; got " + shape_string(s));
  }
  return {ops::take_time(h, 0, 2), ops::take_time(h, 1, 2)};
}

Var merge(Var pre, Var post) {
  if (pre.shape() != post.shape()) {
    throw DimensionError("merge: " + shape_string(pre.shape()) + " vs " + shape_string(post.shape()));
  }
  return ops::interleave_time(pre, post);
}

std::pair<Var, Var> interact(Var pre, Var post, const BranchTransform& transform) {
  if (pre.shape() != post.shape()) {
    throw DimensionError("interact: " + shape_string(pre.shape()) + " vs " + shape_string(post.shape()));
  }
  Var pre1 = ops::mul(transform(0, post), pre);
  Var post1 = ops::mul(transform(1, pre), post);
  Var pre2 = ops::add(transform(2, post1), pre1);
  Var post2 = ops::add(transform(3, pre1), post1);
  return {pre2, post2};
}

STCompModule::STCompModule(ParameterStore& store, const std::string& prefix,
                           const STCompConfig& config, std::size_t remaining_depth, Initializer& init)
    : name_(prefix) {
  for (std::size_t i = 0; i < 4; ++i) {
    temporal_[i] = std::make_unique<AttConvBlock>(store, prefix + ".attconv" + std::to_string(i),
                                                  config.temporal, init);
  }
  spatial_ = std::make_unique<FusionGraphBlock>(store, prefix + ".fgraph", config.spatial, init);
  if (remaining_depth > 1) {
    children_[0] = std::make_unique<STCompModule>(store, prefix + ".pre", config, remaining_depth - 1, init);
    children_[1] = std::make_unique<STCompModule>(store, prefix + ".post", config, remaining_depth - 1, init);
  }
}

std::size_t STCompModule::tree_size() const {
  std::size_t total = 1;
  for (const auto& c : children_) {
    if (c) total += c->tree_size();
  }
  return total;
}

Var STCompModule::transform(std::size_t arrow, Var x, Var prompt, GraphTrace* trace) const {
  Var y = spatial_->forward(temporal_.at(arrow)->forward(x), prompt, trace,
                            name_ + ".arrow" + std::to_string(arrow));
  return arrow < 2 ? ops::tanh(y) : y;
}

Var STCompModule::forward(Var h, Var prompt, const BranchTransform* override_transform,
                          GraphTrace* trace) const {
  auto [pre, post] = split(h);
  BranchTransform fn = override_transform
                           ? *override_transform
                           : BranchTransform([&](std::size_t arrow, Var x) {
                               return transform(arrow, x, prompt, trace);
                             });
  auto [pre2, post2] = interact(pre, post, fn);
  if (children_[0]) {
    pre2 = children_[0]->forward(pre2, prompt, override_transform, trace);
    post2 = children_[1]->forward(post2, prompt, override_transform, trace);
  }
  return merge(pre2, post2);
}

Encoder::Encoder(ParameterStore& store, const std::string& prefix, const STCompConfig& config,
                 std::size_t depth, Initializer& init)
    : depth_(depth) {
  if (depth > 0) root_ = std::make_unique<STCompModule>(store, prefix + ".root", config, depth, init);
}

Var Encoder::forward(Var h, Var prompt, const BranchTransform* override_transform, GraphTrace* trace) const {
  if (!root_) return h;
  const std::size_t len = h.shape().size() == 3 ? h.shape()[2] : 0;
  if (len == 0 || len % (std::size_t{1} << depth_) != 0) {
    throw ContractError("encoder of depth " + std::to_string(depth_) + " needs a time length divisible by " +
                        std::to_string(std::size_t{1} << depth_) + "; got " + shape_string(h.shape()));
  }
  return ops::add(root_->forward(h, prompt, override_transform, trace), h);
}

}  // namespace fmpestf
