#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <utility>

#include "fmpestf/attconv.hpp"
#include "fmpestf/autodiff.hpp"
#include "fmpestf/fusion_graph.hpp"
#include "fmpestf/parameter_store.hpp"

namespace fmpestf {

// Interval sampling of the time axis: even steps to the first branch, odd to
// the second. Requires an even length.
std::pair<Var, Var> split(Var h);
// Inverse of split.
Var merge(Var pre, Var post);

// Cross-branch transform for one interaction arrow. Arrows 0 and 1 are the
// multiplicative round (pre <- post, post <- pre), arrows 2 and 3 the additive one.
using BranchTransform = std::function<Var(std::size_t arrow, Var x)>;

// Two rounds of interactive learning:
//   pre'  = T0(post) * pre      post'  = T1(pre) * post
//   pre'' = T2(post') + pre'    post'' = T3(pre') + post'
std::pair<Var, Var> interact(Var pre, Var post, const BranchTransform& transform);

struct STCompConfig {
  AttConvConfig temporal;
  FusionGraphConfig spatial;
};

// One split / interact / merge unit with four temporal blocks (one per arrow)
// and one spatial block shared by all four arrows. Children, when present,
// refine each branch after interaction.
class STCompModule {
 public:
  STCompModule(ParameterStore& store, const std::string& prefix, const STCompConfig& config,
               std::size_t remaining_depth, Initializer& init);

  // The default arrow transform: FusionGraph(AttConv_i(x)), tanh-bounded on
  // the multiplicative arrows.
  Var transform(std::size_t arrow, Var x, Var prompt, GraphTrace* trace) const;

  // `override_transform`, when set, replaces every arrow in the whole subtree.
  Var forward(Var h, Var prompt, const BranchTransform* override_transform = nullptr,
              GraphTrace* trace = nullptr) const;

  const AttConvBlock& temporal(std::size_t arrow) const { return *temporal_.at(arrow); }
  const FusionGraphBlock& spatial() const { return *spatial_; }
  const STCompModule* child(std::size_t i) const { return children_.at(i).get(); }
  std::size_t tree_size() const;
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::array<std::unique_ptr<AttConvBlock>, 4> temporal_;
  std::unique_ptr<FusionGraphBlock> spatial_;
  std::array<std::unique_ptr<STCompModule>, 2> children_;
};

// Tree of ST-Comp modules plus the encoder residual: H_e = tree(H) + H.
// Depth 0 has no modules and returns H unchanged.
class Encoder {
 public:
  Encoder(ParameterStore& store, const std::string& prefix, const STCompConfig& config,
          std::size_t depth, Initializer& init);

  Var forward(Var h, Var prompt, const BranchTransform* override_transform = nullptr,
              GraphTrace* trace = nullptr) const;

  std::size_t depth() const { return depth_; }
  const STCompModule* root() const { return root_.get(); }

 private:
  std::size_t depth_;
  std::unique_ptr<STCompModule> root_;
};

}  // namespace fmpestf
