#pragma once

// Reference CPU interpreter for a subset of ONNX operators (float32, NCHW
// convolution/pooling). Covers the operators emitted by common CNN exports:
// ResNet-style backbones, linear heads and simple reshaping glue.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sptd/error.hpp"
#include "sptd/onnx/model.hpp"

namespace sptd::onnx {

struct Value {
  std::vector<std::int64_t> dims;
  std::vector<float> f;
  std::vector<std::int64_t> i;
  bool is_int = false;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  static Value floats(std::vector<std::int64_t> dims, std::vector<float> data) {
    Value v;
    v.dims = std::move(dims);
    v.f = std::move(data);
    return v;
  }
  static Value ints(std::vector<std::int64_t> dims, std::vector<std::int64_t> data) {
    Value v;
    v.dims = std::move(dims);
    v.i = std::move(data);
    v.is_int = true;
    return v;
  }
  std::vector<std::int64_t> as_ints() const {
    if (is_int) return i;
    std::vector<std::int64_t> out(f.size());
    std::transform(f.begin(), f.end(), out.begin(), [](float x) { return static_cast<std::int64_t>(x); });
    return out;
  }
};

namespace ops {

[[noreturn]] inline void unsupported(const NodeProto& n, const std::string& why) {
  fail(ErrorCode::UnsupportedGraph, n.op_type + " node '" + n.name + "': " + why);
}

inline std::vector<std::size_t> strides_of(const std::vector<std::int64_t>& dims) {
  std::vector<std::size_t> s(dims.size(), 1);
  for (int k = static_cast<int>(dims.size()) - 2; k >= 0; --k) s[k] = s[k + 1] * static_cast<std::size_t>(dims[k + 1]);
  return s;
}

inline std::vector<std::int64_t> broadcast_dims(const NodeProto& n, const std::vector<std::int64_t>& a,
                                                const std::vector<std::int64_t>& b) {
  const std::size_t r = std::max(a.size(), b.size());
  std::vector<std::int64_t> out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k + a.size() >= r ? a[k + a.size() - r] : 1;
    const std::int64_t db = k + b.size() >= r ? b[k + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) unsupported(n, "shapes do not broadcast");
    out[k] = std::max(da, db);
  }
  return out;
}

// Maps a flat output index to the flat index of a broadcast input.
inline std::vector<std::size_t> broadcast_strides(const std::vector<std::int64_t>& in, const std::vector<std::int64_t>& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto own = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t k = 0; k < in.size(); ++k) s[off + k] = in[k] == 1 ? 0 : own[k];
  return s;
}

template <class Fn>
Value binary(const NodeProto& n, const Value& a, const Value& b, Fn fn) {
  Value out;
  out.dims = broadcast_dims(n, a.dims, b.dims);
  const std::size_t total = out.count();
  out.f.resize(total);
  const auto sa = broadcast_strides(a.dims, out.dims), sb = broadcast_strides(b.dims, out.dims);
  const auto so = strides_of(out.dims);
  std::vector<float> af = a.is_int ? std::vector<float>(a.i.begin(), a.i.end()) : a.f;
  std::vector<float> bf = b.is_int ? std::vector<float>(b.i.begin(), b.i.end()) : b.f;
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx, ia = 0, ib = 0;
    for (std::size_t k = 0; k < out.dims.size(); ++k) {
      const std::size_t c = rem / so[k];
      rem %= so[k];
      ia += c * sa[k];
      ib += c * sb[k];
    }
    out.f[idx] = fn(af[ia], bf[ib]);
  }
  return out;
}

inline Value conv(const NodeProto& n, const Value& x, const Value& w, const Value* bias) {
  if (x.dims.size() != 4 || w.dims.size() != 4) unsupported(n, "only 2-D convolution is supported");
  if (n.attr_string("auto_pad", "NOTSET") != "NOTSET") unsupported(n, "auto_pad is not supported");
  const auto group = n.attr_int("group", 1);
  const auto strides = n.attr_ints("strides", {1, 1});
  const auto dil = n.attr_ints("dilations", {1, 1});
  const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
  const std::int64_t N = x.dims[0], C = x.dims[1], H = x.dims[2], W = x.dims[3];
  const std::int64_t M = w.dims[0], CG = w.dims[1], KH = w.dims[2], KW = w.dims[3];
  if (C != CG * group || M % group != 0) unsupported(n, "channel/group mismatch");
  const std::int64_t OH = (H + pads[0] + pads[2] - dil[0] * (KH - 1) - 1) / strides[0] + 1;
  const std::int64_t OW = (W + pads[1] + pads[3] - dil[1] * (KW - 1) - 1) / strides[1] + 1;
  if (OH < 1 || OW < 1) unsupported(n, "empty convolution output");
  Value out = Value::floats({N, M, OH, OW}, std::vector<float>(static_cast<std::size_t>(N * M * OH * OW)));
  const std::int64_t mg = M / group;
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t m = 0; m < M; ++m) {
      const std::int64_t g = m / mg;
      const float bv = bias ? bias->f[static_cast<std::size_t>(m)] : 0.0f;
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = bv;
          for (std::int64_t c = 0; c < CG; ++c) {
            const std::int64_t ic = g * CG + c;
            for (std::int64_t ky = 0; ky < KH; ++ky) {
              const std::int64_t iy = oy * strides[0] - pads[0] + ky * dil[0];
              if (iy < 0 || iy >= H) continue;
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t ix = ox * strides[1] - pads[1] + kx * dil[1];
                if (ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.f[static_cast<std::size_t>(((b * C + ic) * H + iy) * W + ix)]) *
                       w.f[static_cast<std::size_t>(((m * CG + c) * KH + ky) * KW + kx)];
              }
            }
          }
          out.f[static_cast<std::size_t>(((b * M + m) * OH + oy) * OW + ox)] = static_cast<float>(acc);
        }
    }
  return out;
}

inline Value pool(const NodeProto& n, const Value& x, bool is_max) {
  if (x.dims.size() != 4) unsupported(n, "only 2-D pooling is supported");
  if (n.attr_string("auto_pad", "NOTSET") != "NOTSET") unsupported(n, "auto_pad is not supported");
  const auto k = n.attr_ints("kernel_shape");
  if (k.size() != 2) unsupported(n, "kernel_shape must have two entries");
  const auto strides = n.attr_ints("strides", {1, 1});
  const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
  const auto dil = n.attr_ints("dilations", {1, 1});
  if (dil[0] != 1 || dil[1] != 1) unsupported(n, "dilated pooling is not supported");
  const bool ceil_mode = n.attr_int("ceil_mode", 0) != 0;
  const bool include_pad = n.attr_int("count_include_pad", 0) != 0;
  const std::int64_t N = x.dims[0], C = x.dims[1], H = x.dims[2], W = x.dims[3];
  auto out_dim = [&](std::int64_t in, std::int64_t pad, std::int64_t kk, std::int64_t s) {
    const std::int64_t span = in + pad - kk;
    return (ceil_mode ? (span + s - 1) / s : span / s) + 1;
  };
  const std::int64_t OH = out_dim(H, pads[0] + pads[2], k[0], strides[0]);
  const std::int64_t OW = out_dim(W, pads[1] + pads[3], k[1], strides[1]);
  Value out = Value::floats({N, C, OH, OW}, std::vector<float>(static_cast<std::size_t>(N * C * OH * OW)));
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          const std::int64_t y0 = oy * strides[0] - pads[0], x0 = ox * strides[1] - pads[1];
          double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
          std::int64_t cnt = 0;
          for (std::int64_t ky = 0; ky < k[0]; ++ky)
            for (std::int64_t kx = 0; kx < k[1]; ++kx) {
              const std::int64_t iy = y0 + ky, ix = x0 + kx;
              const bool inside = iy >= 0 && iy < H && ix >= 0 && ix < W;
              const bool in_padded = iy < H + pads[2] && ix < W + pads[3];
              if (!inside) {
                if (!is_max && include_pad && in_padded) ++cnt;
                continue;
              }
              const double v = x.f[static_cast<std::size_t>(((b * C + c) * H + iy) * W + ix)];
              acc = is_max ? std::max(acc, v) : acc + v;
              ++cnt;
            }
          out.f[static_cast<std::size_t>(((b * C + c) * OH + oy) * OW + ox)] =
              static_cast<float>(is_max ? acc : (cnt ? acc / static_cast<double>(cnt) : 0.0));
        }
  return out;
}

inline Value global_pool(const NodeProto& n, const Value& x, bool is_max) {
  if (x.dims.size() < 3) unsupported(n, "expects N x C x spatial input");
  const std::size_t N = static_cast<std::size_t>(x.dims[0]), C = static_cast<std::size_t>(x.dims[1]);
  const std::size_t inner = x.count() / (N * C);
  std::vector<std::int64_t> dims(x.dims.size(), 1);
  dims[0] = x.dims[0];
  dims[1] = x.dims[1];
  Value out = Value::floats(dims, std::vector<float>(N * C));
  for (std::size_t p = 0; p < N * C; ++p) {
    double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t q = 0; q < inner; ++q) {
      const double v = x.f[p * inner + q];
      acc = is_max ? std::max(acc, v) : acc + v;
    }
    out.f[p] = static_cast<float>(is_max ? acc : acc / static_cast<double>(inner));
  }
  return out;
}

// C = A(...xMxK) * B(KxN or ...xKxN); batch dims of A are kept, B may be 2-D.
inline Value matmul(const NodeProto& n, const Value& a, const Value& b) {
  if (a.dims.size() < 2 || b.dims.size() < 2) unsupported(n, "MatMul needs rank >= 2 operands");
  const std::int64_t M = a.dims[a.dims.size() - 2], K = a.dims.back();
  const std::int64_t K2 = b.dims[b.dims.size() - 2], NN = b.dims.back();
  if (K != K2) unsupported(n, "inner dimensions differ");
  const std::size_t batch_a = a.count() / static_cast<std::size_t>(M * K);
  const std::size_t batch_b = b.count() / static_cast<std::size_t>(K * NN);
  if (batch_b != 1 && batch_b != batch_a) unsupported(n, "unsupported batch broadcasting");
  std::vector<std::int64_t> dims(a.dims.begin(), a.dims.end() - 1);
  dims.push_back(NN);
  Value out = Value::floats(dims, std::vector<float>(batch_a * static_cast<std::size_t>(M * NN)));
  for (std::size_t bt = 0; bt < batch_a; ++bt) {
    const float* pa = a.f.data() + bt * static_cast<std::size_t>(M * K);
    const float* pb = b.f.data() + (batch_b == 1 ? 0 : bt * static_cast<std::size_t>(K * NN));
    float* po = out.f.data() + bt * static_cast<std::size_t>(M * NN);
    for (std::int64_t r = 0; r < M; ++r)
      for (std::int64_t c = 0; c < NN; ++c) {
        double acc = 0.0;
        for (std::int64_t q = 0; q < K; ++q) acc += static_cast<double>(pa[r * K + q]) * pb[q * NN + c];
        po[r * NN + c] = static_cast<float>(acc);
      }
  }
  return out;
}

inline Value gemm(const NodeProto& n, const Value& a, const Value& b, const Value* c) {
  if (a.dims.size() != 2 || b.dims.size() != 2) unsupported(n, "Gemm needs 2-D operands");
  const bool ta = n.attr_int("transA", 0) != 0, tb = n.attr_int("transB", 0) != 0;
  const float alpha = n.attr_float("alpha", 1.0f), beta = n.attr_float("beta", 1.0f);
  const std::int64_t M = ta ? a.dims[1] : a.dims[0], K = ta ? a.dims[0] : a.dims[1];
  const std::int64_t Kb = tb ? b.dims[1] : b.dims[0], NN = tb ? b.dims[0] : b.dims[1];
  if (K != Kb) unsupported(n, "inner dimensions differ");
  Value out = Value::floats({M, NN}, std::vector<float>(static_cast<std::size_t>(M * NN)));
  std::vector<std::size_t> cs;
  if (c) cs = broadcast_strides(c->dims, out.dims);
  for (std::int64_t r = 0; r < M; ++r)
    for (std::int64_t col = 0; col < NN; ++col) {
      double acc = 0.0;
      for (std::int64_t q = 0; q < K; ++q) {
        const float av = ta ? a.f[static_cast<std::size_t>(q * M + r)] : a.f[static_cast<std::size_t>(r * K + q)];
        const float bv = tb ? b.f[static_cast<std::size_t>(col * K + q)] : b.f[static_cast<std::size_t>(q * NN + col)];
        acc += static_cast<double>(av) * bv;
      }
      double v = alpha * acc;
      if (c) v += static_cast<double>(beta) * c->f[static_cast<std::size_t>(r) * cs[0] + static_cast<std::size_t>(col) * cs[1]];
      out.f[static_cast<std::size_t>(r * NN + col)] = static_cast<float>(v);
    }
  return out;
}

inline Value transpose(const NodeProto& n, const Value& x) {
  std::vector<std::int64_t> perm = n.attr_ints("perm");
  const std::size_t r = x.dims.size();
  if (perm.empty()) {
    perm.resize(r);
    for (std::size_t k = 0; k < r; ++k) perm[k] = static_cast<std::int64_t>(r - 1 - k);
  }
  if (perm.size() != r) unsupported(n, "perm rank mismatch");
  std::vector<std::int64_t> dims(r);
  for (std::size_t k = 0; k < r; ++k) dims[k] = x.dims[static_cast<std::size_t>(perm[k])];
  const auto in_s = strides_of(x.dims), out_s = strides_of(dims);
  Value out = x;
  out.dims = dims;
  const std::size_t total = x.count();
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx, src = 0;
    for (std::size_t k = 0; k < r; ++k) {
      const std::size_t c = rem / out_s[k];
      rem %= out_s[k];
      src += c * in_s[static_cast<std::size_t>(perm[k])];
    }
    if (x.is_int)
      out.i[idx] = x.i[src];
    else
      out.f[idx] = x.f[src];
  }
  return out;
}

inline std::size_t norm_axis(const NodeProto& n, std::int64_t axis, std::size_t rank, bool allow_end = false) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r + (allow_end ? 1 : 0);
  if (axis < 0 || axis > r - (allow_end ? 0 : 1)) unsupported(n, "axis out of range");
  return static_cast<std::size_t>(axis);
}

}  // namespace ops

// Executes one ONNX graph with a single float input and a single output.
class GraphRunner {
 public:
  explicit GraphRunner(ModelProto model) : model_(std::move(model)) {
    const auto& g = model_.graph;
    std::set<std::string> init_names;
    for (const auto& t : g.initializers) {
      init_names.insert(t.name);
      constants_[t.name] = to_value(t);
    }
    for (const auto& in : g.inputs)
      if (!init_names.count(in.name)) data_inputs_.push_back(in);
    if (data_inputs_.size() != 1)
      fail(ErrorCode::UnsupportedGraph, "graph '" + g.name + "' must have exactly one non-initializer input, has " +
                                            std::to_string(data_inputs_.size()));
    if (g.outputs.size() != 1) fail(ErrorCode::UnsupportedGraph, "graph '" + g.name + "' must have exactly one output");
    for (const auto& [domain, version] : model_.opsets)
      if (!domain.empty() && domain != "ai.onnx") fail(ErrorCode::UnsupportedGraph, "custom operator domain '" + domain + "'");
    for (const auto& node : g.nodes)
      if (!supported(node.op_type)) fail(ErrorCode::UnsupportedGraph, "operator '" + node.op_type + "' is not supported");
  }

  const ValueInfoProto& input_info() const { return data_inputs_.front(); }
  const ValueInfoProto& output_info() const { return model_.graph.outputs.front(); }
  const ModelProto& model() const { return model_; }

  static bool supported(const std::string& op) {
    static const std::set<std::string> ops{"Conv", "Relu", "LeakyRelu", "Sigmoid", "Tanh", "Clip", "Add", "Sub", "Mul",
                                           "Div", "MatMul", "Gemm", "BatchNormalization", "MaxPool", "AveragePool",
                                           "GlobalAveragePool", "GlobalMaxPool", "Flatten", "Reshape", "Transpose",
                                           "Identity", "Dropout", "Softmax", "Concat", "Constant", "Squeeze",
                                           "Unsqueeze", "ReduceMean"};
    return ops.count(op) != 0;
  }

  Value run(Value input) const {
    std::unordered_map<std::string, Value> env;
    env.emplace(data_inputs_.front().name, std::move(input));
    auto get = [&](const NodeProto& n, std::size_t k) -> const Value& {
      if (k >= n.inputs.size() || n.inputs[k].empty()) ops::unsupported(n, "missing input " + std::to_string(k));
      const auto& name = n.inputs[k];
      if (auto it = env.find(name); it != env.end()) return it->second;
      if (auto it = constants_.find(name); it != constants_.end()) return it->second;
      ops::unsupported(n, "input '" + name + "' is not produced before use");
    };
    auto opt = [&](const NodeProto& n, std::size_t k) -> const Value* {
      if (k >= n.inputs.size() || n.inputs[k].empty()) return nullptr;
      return &get(n, k);
    };
    for (const auto& n : model_.graph.nodes) {
      if (n.outputs.empty()) ops::unsupported(n, "node has no outputs");
      env[n.outputs.front()] = eval(n, get, opt);
    }
    auto it = env.find(output_info().name);
    if (it == env.end()) fail(ErrorCode::UnsupportedGraph, "graph output '" + output_info().name + "' never produced");
    return it->second;
  }

 private:
  static Value to_value(const TensorProto& t) {
    if (t.is_integer()) return Value::ints(t.dims, t.ints);
    return Value::floats(t.dims, t.floats);
  }

  template <class Get, class Opt>
  Value eval(const NodeProto& n, Get& get, Opt& opt) const {
    const std::string& op = n.op_type;
    auto unary = [&](auto fn) {
      Value v = get(n, 0);
      for (float& x : v.f) x = fn(x);
      return v;
    };
    if (op == "Conv") return ops::conv(n, get(n, 0), get(n, 1), opt(n, 2));
    if (op == "Relu") return unary([](float x) { return x > 0.0f ? x : 0.0f; });
    if (op == "LeakyRelu") {
      const float a = n.attr_float("alpha", 0.01f);
      return unary([a](float x) { return x >= 0.0f ? x : a * x; });
    }
    if (op == "Sigmoid") return unary([](float x) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); });
    if (op == "Tanh") return unary([](float x) { return std::tanh(x); });
    if (op == "Clip") {
      float lo = n.attr_float("min", -std::numeric_limits<float>::infinity());
      float hi = n.attr_float("max", std::numeric_limits<float>::infinity());
      if (const Value* v = opt(n, 1)) lo = v->f.at(0);
      if (const Value* v = opt(n, 2)) hi = v->f.at(0);
      return unary([lo, hi](float x) { return std::clamp(x, lo, hi); });
    }
    if (op == "Add") return ops::binary(n, get(n, 0), get(n, 1), [](float a, float b) { return a + b; });
    if (op == "Sub") return ops::binary(n, get(n, 0), get(n, 1), [](float a, float b) { return a - b; });
    if (op == "Mul") return ops::binary(n, get(n, 0), get(n, 1), [](float a, float b) { return a * b; });
    if (op == "Div") return ops::binary(n, get(n, 0), get(n, 1), [](float a, float b) { return a / b; });
    if (op == "MatMul") return ops::matmul(n, get(n, 0), get(n, 1));
    if (op == "Gemm") return ops::gemm(n, get(n, 0), get(n, 1), opt(n, 2));
    if (op == "BatchNormalization") {
      Value x = get(n, 0);
      const auto &scale = get(n, 1), &bias = get(n, 2), &mean = get(n, 3), &var = get(n, 4);
      const double eps = n.attr_float("epsilon", 1e-5f);
      const std::size_t C = static_cast<std::size_t>(x.dims.at(1));
      const std::size_t inner = x.count() / (static_cast<std::size_t>(x.dims[0]) * C);
      for (std::size_t idx = 0; idx < x.f.size(); ++idx) {
        const std::size_t c = (idx / inner) % C;
        x.f[idx] = static_cast<float>((x.f[idx] - mean.f[c]) / std::sqrt(var.f[c] + eps) * scale.f[c] + bias.f[c]);
      }
      return x;
    }
    if (op == "MaxPool") return ops::pool(n, get(n, 0), true);
    if (op == "AveragePool") return ops::pool(n, get(n, 0), false);
    if (op == "GlobalAveragePool") return ops::global_pool(n, get(n, 0), false);
    if (op == "GlobalMaxPool") return ops::global_pool(n, get(n, 0), true);
    if (op == "Flatten") {
      Value x = get(n, 0);
      const std::size_t axis = ops::norm_axis(n, n.attr_int("axis", 1), x.dims.size(), true);
      std::int64_t outer = 1;
      for (std::size_t k = 0; k < axis; ++k) outer *= x.dims[k];
      x.dims = {outer, static_cast<std::int64_t>(x.count()) / outer};
      return x;
    }
    if (op == "Reshape") {
      Value x = get(n, 0);
      auto shape = get(n, 1).as_ints();
      std::int64_t known = 1;
      int infer = -1;
      for (std::size_t k = 0; k < shape.size(); ++k) {
        if (shape[k] == 0) shape[k] = x.dims.at(k);
        if (shape[k] == -1)
          infer = static_cast<int>(k);
        else
          known *= shape[k];
      }
      if (infer >= 0) shape[static_cast<std::size_t>(infer)] = static_cast<std::int64_t>(x.count()) / known;
      std::int64_t total = 1;
      for (auto d : shape) total *= d;
      if (static_cast<std::size_t>(total) != x.count()) ops::unsupported(n, "reshape changes element count");
      x.dims = shape;
      return x;
    }
    if (op == "Transpose") return ops::transpose(n, get(n, 0));
    if (op == "Identity" || op == "Dropout") return get(n, 0);
    if (op == "Softmax") {
      Value x = get(n, 0);
      const std::size_t axis = ops::norm_axis(n, n.attr_int("axis", -1), x.dims.size());
      if (axis != x.dims.size() - 1) ops::unsupported(n, "softmax only over the last axis");
      const std::size_t len = static_cast<std::size_t>(x.dims.back());
      for (std::size_t base = 0; base < x.f.size(); base += len) {
        const float mx = *std::max_element(x.f.begin() + static_cast<std::ptrdiff_t>(base),
                                           x.f.begin() + static_cast<std::ptrdiff_t>(base + len));
        double sum = 0.0;
        for (std::size_t q = 0; q < len; ++q) sum += std::exp(static_cast<double>(x.f[base + q] - mx));
        for (std::size_t q = 0; q < len; ++q) x.f[base + q] = static_cast<float>(std::exp(static_cast<double>(x.f[base + q] - mx)) / sum);
      }
      return x;
    }
    if (op == "Concat") {
      const Value& first = get(n, 0);
      const std::size_t axis = ops::norm_axis(n, n.attr_int("axis", 0), first.dims.size());
      std::vector<const Value*> parts;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(&get(n, k));
      std::vector<std::int64_t> dims = first.dims;
      dims[axis] = 0;
      for (const auto* p : parts) dims[axis] += p->dims.at(axis);
      std::size_t outer = 1;
      for (std::size_t k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(dims[k]);
      Value out = Value::floats(dims, {});
      for (std::size_t o = 0; o < outer; ++o)
        for (const auto* p : parts) {
          const std::size_t chunk = p->count() / outer;
          out.f.insert(out.f.end(), p->f.begin() + static_cast<std::ptrdiff_t>(o * chunk),
                       p->f.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk));
        }
      return out;
    }
    if (op == "Constant") {
      const auto* a = n.attr("value");
      if (!a || !a->t) ops::unsupported(n, "only tensor-valued constants are supported");
      return to_value(*a->t);
    }
    if (op == "Squeeze" || op == "Unsqueeze") {
      Value x = get(n, 0);
      std::vector<std::int64_t> axes = n.attr_ints("axes");
      if (const Value* v = opt(n, 1)) axes = v->as_ints();
      if (op == "Squeeze") {
        std::vector<std::int64_t> dims;
        for (std::size_t k = 0; k < x.dims.size(); ++k) {
          const bool listed = std::any_of(axes.begin(), axes.end(), [&](std::int64_t a) {
            return ops::norm_axis(n, a, x.dims.size()) == k;
          });
          if ((axes.empty() && x.dims[k] == 1) || listed) continue;
          dims.push_back(x.dims[k]);
        }
        x.dims = dims;
      } else {
        const std::size_t out_rank = x.dims.size() + axes.size();
        std::vector<std::size_t> norm;
        for (auto a : axes) norm.push_back(ops::norm_axis(n, a, out_rank));
        std::vector<std::int64_t> dims;
        std::size_t src = 0;
        for (std::size_t k = 0; k < out_rank; ++k)
          dims.push_back(std::find(norm.begin(), norm.end(), k) != norm.end() ? 1 : x.dims.at(src++));
        x.dims = dims;
      }
      return x;
    }
    if (op == "ReduceMean") {
      const Value& x = get(n, 0);
      auto axes = n.attr_ints("axes");
      if (const Value* v = opt(n, 1)) axes = v->as_ints();
      const bool keep = n.attr_int("keepdims", 1) != 0;
      std::vector<bool> reduce(x.dims.size(), axes.empty());
      for (auto a : axes) reduce[ops::norm_axis(n, a, x.dims.size())] = true;
      std::vector<std::int64_t> kept_dims(x.dims.size());
      for (std::size_t k = 0; k < x.dims.size(); ++k) kept_dims[k] = reduce[k] ? 1 : x.dims[k];
      Value out = Value::floats(kept_dims, std::vector<float>());
      std::vector<double> acc(out.count(), 0.0);
      const auto in_s = ops::strides_of(x.dims), out_s = ops::strides_of(kept_dims);
      for (std::size_t idx = 0; idx < x.count(); ++idx) {
        std::size_t rem = idx, dst = 0;
        for (std::size_t k = 0; k < x.dims.size(); ++k) {
          const std::size_t c = rem / in_s[k];
          rem %= in_s[k];
          if (!reduce[k]) dst += c * out_s[k];
        }
        acc[dst] += x.f[idx];
      }
      const double denom = static_cast<double>(x.count()) / static_cast<double>(out.count());
      out.f.resize(acc.size());
      for (std::size_t k = 0; k < acc.size(); ++k) out.f[k] = static_cast<float>(acc[k] / denom);
      if (!keep) {
        std::vector<std::int64_t> dims;
        for (std::size_t k = 0; k < x.dims.size(); ++k)
          if (!reduce[k]) dims.push_back(x.dims[k]);
        out.dims = dims;
      }
      return out;
    }
    ops::unsupported(n, "operator not implemented");
  }

  ModelProto model_;
  std::map<std::string, Value> constants_;
  std::vector<ValueInfoProto> data_inputs_;
};

}  // namespace sptd::onnx
