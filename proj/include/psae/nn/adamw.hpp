#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/nn/tensor.hpp"

namespace psae::nn {

struct AdamWHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// A trainable tensor and whether decoupled weight decay applies to it
/// (weight matrices yes; biases and layer-norm parameters no).
template <typename T>
struct ParamSlot {
  std::string name;
  Var<T> param;
  bool decay = true;
};

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step_count = 0;
  AdamWHyper hyper;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const std::vector<ParamSlot<T>>& params, AdamWHyper hyper = {}) {
  OptimizerState<T> state;
  state.hyper = hyper;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.param.shape(), T(0));
    state.second_moment.emplace_back(p.param.shape(), T(0));
  }
  return state;
}

/// One bias-corrected Adam step with decoupled decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// Parameters without an accumulated gradient are treated as having zero gradient.
template <typename T>
void adamw_step(std::vector<ParamSlot<T>>& params, OptimizerState<T>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                              " tensors but " + std::to_string(params.size()) + " were given");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].shape != params[i].param.shape() ||
        state.second_moment[i].shape != params[i].param.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "moment buffers of '" + params[i].name + "' are " +
                                                shape_str(state.first_moment[i].shape) + ", parameter is " +
                                                shape_str(params[i].param.shape()));
    }
  }

  ++state.step_count;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step_count);
  const T lr = T(h.learning_rate);
  const T b1 = T(h.beta1), b2 = T(h.beta2), eps = T(h.epsilon);
  const T bc1 = T(1.0 - std::pow(h.beta1, t));
  const T bc2 = T(1.0 - std::pow(h.beta2, t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& slot = params[i];
    auto& value = slot.param.mutable_value();
    const bool has_grad = slot.param.has_grad();
    const T wd = slot.decay ? T(h.weight_decay) : T(0);
    auto& m = state.first_moment[i].data;
    auto& v = state.second_moment[i].data;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = has_grad ? slot.param.grad()[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T m_hat = m[j] / bc1;
      const T v_hat = v[j] / bc2;
      value[j] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * value[j]);
    }
  }
}

template <typename T>
void zero_grads(std::vector<ParamSlot<T>>& params) {
  for (auto& p : params) p.param.zero_grad();
}

}  // namespace psae::nn
