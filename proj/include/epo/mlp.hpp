#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epo/mat.hpp"
#include "epo/params.hpp"
#include "epo/rng.hpp"

namespace epo {

enum class Activation { elu, tanh };

/// Dimensions of a multilayer perceptron: input -> hidden... -> output with
/// the configured activation on every hidden layer and a linear output.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  Activation activation = Activation::elu;

  std::size_t num_layers() const { return hidden_dims.size() + 1; }

  /// fan_in of layer l.
  std::size_t layer_in(std::size_t l) const {
    return l == 0 ? input_dim : hidden_dims[l - 1];
  }
  /// fan_out of layer l.
  std::size_t layer_out(std::size_t l) const {
    return l == hidden_dims.size() ? output_dim : hidden_dims[l];
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      n += (layer_in(l) + 1) * layer_out(l);
    }
    return n;
  }
};

inline std::string mlp_weight_name(std::string_view prefix, std::size_t l) {
  return std::string(prefix) + "W" + std::to_string(l);
}
inline std::string mlp_bias_name(std::string_view prefix, std::size_t l) {
  return std::string(prefix) + "b" + std::to_string(l);
}

/// Registers the spec's weight/bias blocks on a ParamVector under `prefix`.
inline void add_mlp_blocks(ParamVector& pv, const MlpSpec& spec,
                           std::string_view prefix) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    pv.add(mlp_weight_name(prefix, l), spec.layer_in(l), spec.layer_out(l));
    pv.add(mlp_bias_name(prefix, l), 1, spec.layer_out(l));
  }
}

/// Scaled-uniform init: W ~ U(+-sqrt(6/(fan_in+fan_out))), biases zero.
/// `final_scale` shrinks the last layer's weights (used for the actor mean
/// head so early updates stay small).
inline void mlp_init(ParamVector& pv, const MlpSpec& spec, std::string_view prefix,
                     RngStream& rng, double final_scale = 1.0) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    auto w = pv.block(mlp_weight_name(prefix, l));
    const double bound =
        std::sqrt(6.0 / static_cast<double>(spec.layer_in(l) + spec.layer_out(l)));
    const double scale = (l == spec.num_layers() - 1) ? final_scale : 1.0;
    for (double& x : w) x = scale * rng.uniform(-bound, bound);
    auto b = pv.block(mlp_bias_name(prefix, l));
    for (double& x : b) x = 0.0;
  }
}

struct MlpLayerRef {
  std::span<const double> w;
  std::span<const double> b;
  std::size_t in = 0;
  std::size_t out = 0;
};

inline std::vector<MlpLayerRef> mlp_layers(const ParamVector& pv, const MlpSpec& spec,
                                           std::string_view prefix) {
  std::vector<MlpLayerRef> layers(spec.num_layers());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    layers[l] = {pv.block(mlp_weight_name(prefix, l)),
                 pv.block(mlp_bias_name(prefix, l)), spec.layer_in(l),
                 spec.layer_out(l)};
  }
  return layers;
}

struct MlpLayerGradRef {
  std::span<double> w;
  std::span<double> b;
};

/// Resolves gradient spans into a flat buffer laid out like `pv`.
inline std::vector<MlpLayerGradRef> mlp_layer_grads(const ParamVector& pv,
                                                    const MlpSpec& spec,
                                                    std::string_view prefix,
                                                    std::span<double> grad) {
  if (grad.size() != pv.size()) throw std::invalid_argument("mlp_layer_grads: buffer size");
  std::vector<MlpLayerGradRef> refs(spec.num_layers());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& wb = pv.info(mlp_weight_name(prefix, l));
    const auto& bb = pv.info(mlp_bias_name(prefix, l));
    refs[l] = {grad.subspan(wb.offset, wb.size()), grad.subspan(bb.offset, bb.size())};
  }
  return refs;
}

/// Forward cache: layer inputs and pre-activations, consumed by the backward
/// pass.
struct MlpCache {
  std::vector<Mat> inputs;
  std::vector<Mat> preacts;
  std::size_t batch = 0;
  std::size_t output_dim = 0;
};

namespace detail {

inline double activate(double z, Activation a) {
  switch (a) {
    case Activation::elu:
      return z > 0.0 ? z : std::expm1(z);
    case Activation::tanh:
      return std::tanh(z);
  }
  return z;
}

inline double activate_grad(double z, Activation a) {
  switch (a) {
    case Activation::elu:
      return z > 0.0 ? 1.0 : std::exp(z);
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

}  // namespace detail

/// Batched forward pass; rows are independent samples. Pass `cache` to make a
/// later backward pass possible.
inline Mat mlp_forward(const MlpSpec& spec, const std::vector<MlpLayerRef>& layers,
                       const Mat& input, MlpCache* cache = nullptr) {
  if (input.cols != spec.input_dim) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(input.cols) +
                                " cols, layer 0 expects " +
                                std::to_string(spec.input_dim));
  }
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
    cache->batch = input.rows;
    cache->output_dim = spec.output_dim;
  }
  Mat h = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lay = layers[l];
    Mat w(lay.in, lay.out);
    std::copy(lay.w.begin(), lay.w.end(), w.data.begin());
    if (cache) cache->inputs.push_back(h);
    Mat z = matmul(h, w);
    add_row_inplace(z, lay.b);
    if (cache) cache->preacts.push_back(z);
    if (l + 1 < layers.size()) {
      for (double& x : z.data) x = detail::activate(x, spec.activation);
    }
    h = std::move(z);
  }
  return h;
}

/// Backward pass for a cached forward. Accumulates parameter gradients into
/// `grads` (same layout as the forward's ParamVector) and returns the
/// gradient with respect to the input.
inline Mat mlp_backward(const MlpSpec& spec, const std::vector<MlpLayerRef>& layers,
                        const MlpCache& cache, const Mat& output_grad,
                        const std::vector<MlpLayerGradRef>& grads) {
  if (cache.inputs.size() != layers.size() || cache.preacts.size() != layers.size()) {
    throw std::invalid_argument("mlp_backward: cache does not match network");
  }
  if (output_grad.rows != cache.batch || output_grad.cols != cache.output_dim) {
    throw std::invalid_argument("mlp_backward: output_grad shape does not match cache");
  }
  Mat dh = output_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& lay = layers[li];
    Mat dz = std::move(dh);
    if (li + 1 < layers.size()) {
      const Mat& z = cache.preacts[li];
      for (std::size_t i = 0; i < dz.data.size(); ++i) {
        dz.data[i] *= detail::activate_grad(z.data[i], spec.activation);
      }
    }
    accumulate_at_b(cache.inputs[li], dz, grads[li].w);
    accumulate_colsum(dz, grads[li].b);
    Mat w(lay.in, lay.out);
    std::copy(lay.w.begin(), lay.w.end(), w.data.begin());
    dh = matmul_bt(dz, w);
  }
  return dh;
}

}  // namespace epo
