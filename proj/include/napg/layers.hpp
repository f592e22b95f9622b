#pragma once

// Building blocks on top of the autodiff tape: 2-layer GELU FFN, parameter
// initialisation, Adam, and the JSON parameter checkpoint format.

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "napg/autodiff.hpp"

namespace napg::nn {

inline Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// Linear map x * w + b.
struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static Linear create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                       std::mt19937_64& rng) {
    Linear l;
    l.w = &store.add(prefix + ".w", glorot_uniform(in, out, rng));
    l.b = &store.add(prefix + ".b", Matrix::Zero(1, out));
    return l;
  }

  Var operator()(Graph& g, const Var& x) const { return add_row(matmul(x, g.param(*w)), g.param(*b)); }
};

/// gelu(x * w1 + b1) * w2 + b2
struct FfnParams {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;
  Eigen::Index in_dim = 0;
  Eigen::Index hidden_dim = 0;
  Eigen::Index out_dim = 0;

  static FfnParams create(ParameterStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                          Eigen::Index out, std::mt19937_64& rng) {
    FfnParams p;
    p.w1 = &store.add(prefix + ".w1", glorot_uniform(in, hidden, rng));
    p.b1 = &store.add(prefix + ".b1", Matrix::Zero(1, hidden));
    p.w2 = &store.add(prefix + ".w2", glorot_uniform(hidden, out, rng));
    p.b2 = &store.add(prefix + ".b2", Matrix::Zero(1, out));
    p.in_dim = in;
    p.hidden_dim = hidden;
    p.out_dim = out;
    return p;
  }
};

inline Var ffn_forward(Graph& g, const Var& x, const FfnParams& p) {
  if (x.cols() != p.in_dim) {
    throw ShapeError("ffn_forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(p.in_dim));
  }
  Var h = gelu(add_row(matmul(x, g.param(*p.w1)), g.param(*p.b1)));
  return add_row(matmul(h, g.param(*p.w2)), g.param(*p.b2));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One Adam update over every parameter that has a gradient in `grads`.
/// Returns the pre-clipping global gradient norm.
inline double adam_step(ParameterStore& store, GradBuffer& grads, AdamState& state, const AdamHyper& hyper) {
  const double norm = std::sqrt(grads.squared_norm());
  if (hyper.max_grad_norm > 0.0 && norm > hyper.max_grad_norm) grads.scale(hyper.max_grad_norm / norm);
  if (state.m.size() < store.size()) {
    state.m.resize(store.size());
    state.v.resize(store.size());
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!grads.has(i)) continue;
    Parameter& p = store[i];
    const Matrix& g = grads[i];
    if (state.m[i].size() == 0) {
      state.m[i] = Matrix::Zero(p.value.rows(), p.value.cols());
      state.v[i] = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    p.value.array() -= hyper.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + hyper.eps);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
//   { "format": "napg-params", "version": 1,
//     "parameters": { "<name>": { "shape": [rows, cols], "values": [row-major doubles] } } }

inline constexpr int kParamFormatVersion = 1;

inline nlohmann::json parameters_to_json(const ParameterStore& store) {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    std::vector<double> values(p.value.data(), p.value.data() + p.value.size());
    params[p.name] = {{"shape", {p.value.rows(), p.value.cols()}}, {"values", std::move(values)}};
  }
  return {{"format", "napg-params"}, {"version", kParamFormatVersion}, {"parameters", std::move(params)}};
}

/// Overwrites every parameter in `store` from `j`; names and shapes must match exactly.
inline void parameters_from_json(const nlohmann::json& j, ParameterStore& store) {
  if (j.value("format", "") != "napg-params") throw std::runtime_error("not a napg parameter block");
  if (j.value("version", 0) != kParamFormatVersion) {
    throw std::runtime_error("unsupported parameter format version " + std::to_string(j.value("version", 0)));
  }
  const auto& params = j.at("parameters");
  if (params.size() != store.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                             std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (!params.contains(p.name)) throw std::runtime_error("checkpoint lacks parameter " + p.name);
    const auto& entry = params.at(p.name);
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols()) {
      throw std::runtime_error("shape mismatch for " + p.name);
    }
    const auto values = entry.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(values.size()) != p.value.size()) throw std::runtime_error("value count mismatch for " + p.name);
    std::copy(values.begin(), values.end(), p.value.data());
  }
}

}  // namespace napg::nn
