#include "dpguard/onnx_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dpguard/digest.hpp"
#include "dpguard/error.hpp"
#include "onnx_subset.pb.h"

namespace dpguard::onnx {
namespace {

namespace pb = dpguard_onnx;
using Shape = std::vector<std::int64_t>;

std::int64_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorKind::kShape, msg); }

Tensor make_float(Shape shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(product(t.shape)), 0.0f);
  return t;
}

Tensor from_proto(const pb::TensorProto& p) {
  Tensor t;
  t.shape.assign(p.dims().begin(), p.dims().end());
  const std::size_t n = static_cast<std::size_t>(product(t.shape));
  const std::string& raw = p.raw_data();
  switch (p.data_type()) {
    case pb::TensorProto::FLOAT:
      if (!raw.empty()) {
        if (raw.size() != n * 4) shape_error("tensor " + p.name() + ": raw_data size mismatch");
        t.data.resize(n);
        std::memcpy(t.data.data(), raw.data(), raw.size());
      } else {
        t.data.assign(p.float_data().begin(), p.float_data().end());
      }
      break;
    case pb::TensorProto::DOUBLE:
      if (!raw.empty()) {
        std::vector<double> tmp(n);
        if (raw.size() != n * 8) shape_error("tensor " + p.name() + ": raw_data size mismatch");
        std::memcpy(tmp.data(), raw.data(), raw.size());
        t.data.assign(tmp.begin(), tmp.end());
      } else {
        t.data.assign(p.double_data().begin(), p.double_data().end());
      }
      break;
    case pb::TensorProto::INT64:
      t.is_int = true;
      if (!raw.empty()) {
        if (raw.size() != n * 8) shape_error("tensor " + p.name() + ": raw_data size mismatch");
        t.ints.resize(n);
        std::memcpy(t.ints.data(), raw.data(), raw.size());
      } else {
        t.ints.assign(p.int64_data().begin(), p.int64_data().end());
      }
      break;
    case pb::TensorProto::INT32:
      t.is_int = true;
      if (!raw.empty()) {
        std::vector<std::int32_t> tmp(n);
        if (raw.size() != n * 4) shape_error("tensor " + p.name() + ": raw_data size mismatch");
        std::memcpy(tmp.data(), raw.data(), raw.size());
        t.ints.assign(tmp.begin(), tmp.end());
      } else {
        t.ints.assign(p.int32_data().begin(), p.int32_data().end());
      }
      break;
    default:
      shape_error("tensor " + p.name() + ": unsupported data type " + std::to_string(p.data_type()));
  }
  const std::size_t have = t.is_int ? t.ints.size() : t.data.size();
  if (have != n) shape_error("tensor " + p.name() + ": expected " + std::to_string(n) + " values");
  return t;
}

Shape dims_of(const pb::ValueInfoProto& v) {
  Shape s;
  if (!v.type().has_tensor_type()) return s;
  for (const auto& d : v.type().tensor_type().shape().dim()) {
    s.push_back(d.has_dim_value() ? d.dim_value() : -1);
  }
  return s;
}

class Attrs {
 public:
  explicit Attrs(const pb::NodeProto& node) {
    for (const auto& a : node.attribute()) map_[a.name()] = &a;
  }
  std::int64_t i(const std::string& name, std::int64_t fallback) const {
    auto it = map_.find(name);
    return it == map_.end() ? fallback : it->second->i();
  }
  float f(const std::string& name, float fallback) const {
    auto it = map_.find(name);
    return it == map_.end() ? fallback : it->second->f();
  }
  std::string s(const std::string& name, const std::string& fallback) const {
    auto it = map_.find(name);
    return it == map_.end() ? fallback : it->second->s();
  }
  Shape ints(const std::string& name, Shape fallback = {}) const {
    auto it = map_.find(name);
    if (it == map_.end()) return fallback;
    return Shape(it->second->ints().begin(), it->second->ints().end());
  }
  const pb::TensorProto* t(const std::string& name) const {
    auto it = map_.find(name);
    return it == map_.end() ? nullptr : &it->second->t();
  }

 private:
  std::unordered_map<std::string, const pb::AttributeProto*> map_;
};

// Window geometry for Conv and pooling along the two spatial axes.
struct Window {
  std::int64_t kernel[2], stride[2], dilation[2], pad_begin[2], out[2];
};

Window make_window(const Attrs& a, const Shape& x, std::int64_t kh, std::int64_t kw, bool ceil_mode) {
  Window w{};
  const Shape strides = a.ints("strides", {1, 1});
  const Shape dil = a.ints("dilations", {1, 1});
  Shape pads = a.ints("pads", {0, 0, 0, 0});
  const std::string auto_pad = a.s("auto_pad", "NOTSET");
  const std::int64_t kernel[2] = {kh, kw};
  for (int d = 0; d < 2; ++d) {
    w.kernel[d] = kernel[d];
    w.stride[d] = strides.at(static_cast<std::size_t>(d));
    w.dilation[d] = dil.at(static_cast<std::size_t>(d));
    const std::int64_t in = x[static_cast<std::size_t>(2 + d)];
    const std::int64_t span = (kernel[d] - 1) * w.dilation[d] + 1;
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      const std::int64_t out = (in + w.stride[d] - 1) / w.stride[d];
      const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * w.stride[d] + span - in);
      w.pad_begin[d] = auto_pad == "SAME_UPPER" ? total / 2 : total - total / 2;
      w.out[d] = out;
    } else {
      if (auto_pad == "VALID") pads = {0, 0, 0, 0};
      w.pad_begin[d] = pads[static_cast<std::size_t>(d)];
      const std::int64_t padded = in + pads[static_cast<std::size_t>(d)] + pads[static_cast<std::size_t>(d + 2)];
      const std::int64_t num = padded - span;
      if (num < 0) shape_error("window larger than padded input");
      w.out[d] = (ceil_mode ? (num + w.stride[d] - 1) / w.stride[d] : num / w.stride[d]) + 1;
    }
  }
  return w;
}

Tensor conv(const Tensor& x, const Tensor& weight, const Tensor* bias, const Attrs& a) {
  if (x.shape.size() != 4 || weight.shape.size() != 4) shape_error("Conv supports 2-D NCHW only");
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::int64_t m = weight.shape[0], cg = weight.shape[1];
  const std::int64_t group = a.i("group", 1);
  if (cg * group != c) shape_error("Conv channel mismatch: input " + shape_str(x.shape) +
                                   ", weight " + shape_str(weight.shape));
  const Window w = make_window(a, x.shape, weight.shape[2], weight.shape[3], false);
  Tensor y = make_float({n, m, w.out[0], w.out[1]});
  const std::int64_t oh = w.out[0], ow = w.out[1];
  const std::int64_t m_per_group = m / group;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oc = 0; oc < m; ++oc) {
      float* out = &y.data[static_cast<std::size_t>(((b * m) + oc) * oh * ow)];
      const float init = bias ? bias->data[static_cast<std::size_t>(oc)] : 0.0f;
      std::fill(out, out + oh * ow, init);
      const std::int64_t g = oc / m_per_group;
      for (std::int64_t ic = 0; ic < cg; ++ic) {
        const float* in = &x.data[static_cast<std::size_t>(((b * c) + g * cg + ic) * h * wd)];
        for (std::int64_t ky = 0; ky < w.kernel[0]; ++ky) {
          for (std::int64_t kx = 0; kx < w.kernel[1]; ++kx) {
            const float k = weight.data[static_cast<std::size_t>(((oc * cg + ic) * w.kernel[0] + ky) * w.kernel[1] + kx)];
            if (k == 0.0f) continue;
            for (std::int64_t yy = 0; yy < oh; ++yy) {
              const std::int64_t iy = yy * w.stride[0] - w.pad_begin[0] + ky * w.dilation[0];
              if (iy < 0 || iy >= h) continue;
              const float* row = in + iy * wd;
              float* orow = out + yy * ow;
              for (std::int64_t xx = 0; xx < ow; ++xx) {
                const std::int64_t ix = xx * w.stride[1] - w.pad_begin[1] + kx * w.dilation[1];
                if (ix < 0 || ix >= wd) continue;
                orow[xx] += k * row[ix];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor pool(const Tensor& x, const Attrs& a, bool is_max) {
  if (x.shape.size() != 4) shape_error("pooling supports 2-D NCHW only");
  const Shape k = a.ints("kernel_shape");
  if (k.size() != 2) shape_error("pooling needs a 2-D kernel_shape");
  const bool ceil_mode = a.i("ceil_mode", 0) != 0;
  const bool include_pad = a.i("count_include_pad", 0) != 0;
  const Window w = make_window(a, x.shape, k[0], k[1], ceil_mode);
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  Tensor y = make_float({n, c, w.out[0], w.out[1]});
  std::size_t o = 0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* in = &x.data[static_cast<std::size_t>((b * c + ch) * h * wd)];
      for (std::int64_t yy = 0; yy < w.out[0]; ++yy) {
        for (std::int64_t xx = 0; xx < w.out[1]; ++xx) {
          float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
          std::int64_t count = 0, padded_count = 0;
          for (std::int64_t ky = 0; ky < w.kernel[0]; ++ky) {
            const std::int64_t iy = yy * w.stride[0] - w.pad_begin[0] + ky * w.dilation[0];
            for (std::int64_t kx = 0; kx < w.kernel[1]; ++kx) {
              const std::int64_t ix = xx * w.stride[1] - w.pad_begin[1] + kx * w.dilation[1];
              if (iy >= h + w.pad_begin[0] || ix >= wd + w.pad_begin[1]) continue;
              ++padded_count;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              const float v = in[iy * wd + ix];
              acc = is_max ? std::max(acc, v) : acc + v;
              ++count;
            }
          }
          if (!is_max) acc /= static_cast<float>(std::max<std::int64_t>(1, include_pad ? padded_count : count));
          y.data[o++] = acc;
        }
      }
    }
  }
  return y;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    const std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1) {
      shape_error("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `s` aligned to `out`, zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t i = s.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

Tensor as_float(const Tensor& t) {
  if (!t.is_int) return t;
  Tensor f;
  f.shape = t.shape;
  f.data.assign(t.ints.begin(), t.ints.end());
  return f;
}

template <typename Op>
Tensor binary(const Tensor& a_in, const Tensor& b_in, Op op) {
  const Tensor a = as_float(a_in), b = as_float(b_in);
  const Shape out_shape = broadcast_shape(a.shape, b.shape);
  Tensor y = make_float(out_shape);
  const auto sa = broadcast_strides(a.shape, out_shape);
  const auto sb = broadcast_strides(b.shape, out_shape);
  std::vector<std::int64_t> idx(out_shape.size(), 0);
  for (std::size_t o = 0; o < y.data.size(); ++o) {
    std::int64_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    y.data[o] = op(a.data[static_cast<std::size_t>(ia)], b.data[static_cast<std::size_t>(ib)]);
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return y;
}

Tensor matmul2d(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.shape.size() != 2 || b.shape.size() != 2) shape_error("MatMul/Gemm supports 2-D operands only");
  const std::int64_t m = trans_a ? a.shape[1] : a.shape[0];
  const std::int64_t k = trans_a ? a.shape[0] : a.shape[1];
  const std::int64_t kb = trans_b ? b.shape[1] : b.shape[0];
  const std::int64_t n = trans_b ? b.shape[0] : b.shape[1];
  if (k != kb) shape_error("matrix product mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Tensor y = make_float({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = trans_a ? a.data[static_cast<std::size_t>(p * m + i)] : a.data[static_cast<std::size_t>(i * k + p)];
      if (av == 0.0f) continue;
      for (std::int64_t j = 0; j < n; ++j) {
        const float bv = trans_b ? b.data[static_cast<std::size_t>(j * k + p)] : b.data[static_cast<std::size_t>(p * n + j)];
        y.data[static_cast<std::size_t>(i * n + j)] += av * bv;
      }
    }
  }
  return y;
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  if (axis < 0) axis += static_cast<std::int64_t>(x.shape.size());
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.shape[static_cast<std::size_t>(i)];
  const std::int64_t len = x.shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < x.shape.size(); ++i) inner *= x.shape[i];
  Tensor y = x;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      auto at = [&](std::int64_t j) -> float& {
        return y.data[static_cast<std::size_t>((o * len + j) * inner + in)];
      };
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, at(j));
      double sum = 0.0;
      for (std::int64_t j = 0; j < len; ++j) sum += std::exp(static_cast<double>(at(j) - mx));
      for (std::int64_t j = 0; j < len; ++j) at(j) = static_cast<float>(std::exp(static_cast<double>(at(j) - mx)) / sum);
    }
  }
  return y;
}

Tensor reshape(const Tensor& x, const Tensor& shape_t) {
  if (!shape_t.is_int) shape_error("Reshape shape must be int64");
  Shape target = shape_t.ints;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 0) target[i] = x.shape.at(i);
    if (target[i] == -1) {
      infer = static_cast<int>(i);
    } else {
      known *= target[i];
    }
  }
  if (infer >= 0) target[static_cast<std::size_t>(infer)] = static_cast<std::int64_t>(x.numel()) / known;
  if (product(target) != static_cast<std::int64_t>(x.numel())) {
    shape_error("cannot reshape " + shape_str(x.shape) + " to " + shape_str(target));
  }
  Tensor y = x;
  y.shape = target;
  return y;
}

}  // namespace

std::size_t Tensor::numel() const { return static_cast<std::size_t>(product(shape)); }

struct Graph::Impl {
  pb::ModelProto model;
  std::unordered_map<std::string, Tensor> initializers;
  std::string input_name;
  Shape input_shape;
  Shape output_shape;
  std::string output_name;
  std::size_t output_count = 0;
  std::map<std::string, std::string> metadata;

  Tensor eval(const Tensor& input) const;
};

Tensor Graph::Impl::eval(const Tensor& input) const {
  std::unordered_map<std::string, Tensor> values;
  values[input_name] = input;
  const auto get = [&](const std::string& name) -> const Tensor& {
    if (auto it = values.find(name); it != values.end()) return it->second;
    if (auto it = initializers.find(name); it != initializers.end()) return it->second;
    shape_error("graph value '" + name + "' is not defined before use");
  };
  for (const auto& node : model.graph().node()) {
    const std::string& op = node.op_type();
    const Attrs a(node);
    const auto in = [&](int i) -> const Tensor& { return get(node.input(i)); };
    const auto has_in = [&](int i) { return node.input_size() > i && !node.input(i).empty(); };
    Tensor y;
    if (op == "Conv") {
      y = conv(in(0), in(1), has_in(2) ? &in(2) : nullptr, a);
    } else if (op == "BatchNormalization") {
      const Tensor& x = in(0);
      const Tensor &scale = in(1), &b = in(2), &mean = in(3), &var = in(4);
      const float eps = a.f("epsilon", 1e-5f);
      y = x;
      const std::int64_t c = x.shape.at(1);
      const std::int64_t inner = static_cast<std::int64_t>(x.numel()) / (x.shape[0] * c);
      for (std::int64_t n = 0; n < x.shape[0]; ++n) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::size_t k = static_cast<std::size_t>(ch);
          const float mul = scale.data[k] / std::sqrt(var.data[k] + eps);
          const float add = b.data[k] - mean.data[k] * mul;
          float* p = &y.data[static_cast<std::size_t>((n * c + ch) * inner)];
          for (std::int64_t i = 0; i < inner; ++i) p[i] = p[i] * mul + add;
        }
      }
    } else if (op == "Relu") {
      y = in(0);
      for (float& v : y.data) v = std::max(v, 0.0f);
    } else if (op == "Sigmoid") {
      y = in(0);
      for (float& v : y.data) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    } else if (op == "MaxPool" || op == "AveragePool") {
      y = pool(in(0), a, op == "MaxPool");
    } else if (op == "GlobalAveragePool") {
      const Tensor& x = in(0);
      if (x.shape.size() < 3) shape_error("GlobalAveragePool needs rank >= 3");
      const std::int64_t n = x.shape[0], c = x.shape[1];
      const std::int64_t inner = static_cast<std::int64_t>(x.numel()) / (n * c);
      Shape s{n, c};
      for (std::size_t i = 2; i < x.shape.size(); ++i) s.push_back(1);
      y = make_float(s);
      for (std::int64_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < inner; ++j) acc += x.data[static_cast<std::size_t>(i * inner + j)];
        y.data[static_cast<std::size_t>(i)] = static_cast<float>(acc / static_cast<double>(inner));
      }
    } else if (op == "Flatten") {
      const Tensor& x = in(0);
      std::int64_t axis = a.i("axis", 1);
      if (axis < 0) axis += static_cast<std::int64_t>(x.shape.size());
      std::int64_t outer = 1;
      for (std::int64_t i = 0; i < axis; ++i) outer *= x.shape[static_cast<std::size_t>(i)];
      y = x;
      y.shape = {outer, static_cast<std::int64_t>(x.numel()) / std::max<std::int64_t>(outer, 1)};
    } else if (op == "Gemm") {
      y = matmul2d(in(0), in(1), a.i("transA", 0) != 0, a.i("transB", 0) != 0);
      const float alpha = a.f("alpha", 1.0f), beta = a.f("beta", 1.0f);
      for (float& v : y.data) v *= alpha;
      if (has_in(2)) {
        y = binary(y, in(2), [beta](float p, float q) { return p + beta * q; });
      }
    } else if (op == "MatMul") {
      y = matmul2d(in(0), in(1), false, false);
    } else if (op == "Add") {
      y = binary(in(0), in(1), std::plus<float>());
    } else if (op == "Sub") {
      y = binary(in(0), in(1), std::minus<float>());
    } else if (op == "Mul") {
      y = binary(in(0), in(1), std::multiplies<float>());
    } else if (op == "Div") {
      y = binary(in(0), in(1), std::divides<float>());
    } else if (op == "Softmax") {
      y = softmax(in(0), a.i("axis", -1));
    } else if (op == "Reshape") {
      y = reshape(in(0), in(1));
    } else if (op == "Identity" || op == "Dropout") {
      y = in(0);
    } else if (op == "Constant") {
      const pb::TensorProto* t = a.t("value");
      if (!t) shape_error("Constant without a tensor 'value' attribute");
      y = from_proto(*t);
    } else {
      shape_error("unsupported operator '" + op + "'");
    }
    values[node.output(0)] = std::move(y);
  }
  return get(output_name);
}

Graph::Graph() : impl_(std::make_unique<Impl>()) {}
Graph::~Graph() = default;
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;

Graph Graph::parse(const std::string& bytes) {
  Graph g;
  Impl& m = *g.impl_;
  if (!m.model.ParseFromString(bytes)) throw Error(ErrorKind::kParse, "not a valid ONNX model file");
  const auto& graph = m.model.graph();
  for (const auto& init : graph.initializer()) m.initializers[init.name()] = from_proto(init);
  for (const auto& kv : m.model.metadata_props()) m.metadata[kv.key()] = kv.value();

  std::vector<const pb::ValueInfoProto*> inputs;
  for (const auto& v : graph.input()) {
    if (!m.initializers.count(v.name())) inputs.push_back(&v);
  }
  if (inputs.size() != 1) {
    shape_error("model must have exactly one image input, found " + std::to_string(inputs.size()));
  }
  m.input_name = inputs[0]->name();
  m.input_shape = dims_of(*inputs[0]);
  if (inputs[0]->type().tensor_type().elem_type() != pb::TensorProto::FLOAT) {
    shape_error("model input must be float32");
  }
  m.output_count = static_cast<std::size_t>(graph.output_size());
  if (m.output_count != 1) {
    shape_error("model must have exactly one output, found " + std::to_string(m.output_count));
  }
  m.output_name = graph.output(0).name();
  m.output_shape = dims_of(graph.output(0));
  return g;
}

Graph Graph::load(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::kIo, "model file not found: " + path);
  const auto bytes = read_file_bytes(path);
  try {
    return parse(std::string(bytes.begin(), bytes.end()));
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

const std::string& Graph::input_name() const { return impl_->input_name; }
const std::vector<std::int64_t>& Graph::input_shape() const { return impl_->input_shape; }
const std::vector<std::int64_t>& Graph::output_shape() const { return impl_->output_shape; }
std::size_t Graph::output_count() const { return impl_->output_count; }
const std::map<std::string, std::string>& Graph::metadata() const { return impl_->metadata; }
Tensor Graph::run(const Tensor& input) const { return impl_->eval(input); }

namespace {

void parse_triplet(const std::string& text, float out[3], const char* key) {
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) break;
    out[i++] = std::stof(item);
  }
  if (i == 1) out[1] = out[2] = out[0];
  if (i != 1 && i != 3) shape_error(std::string("metadata ") + key + " needs 1 or 3 values");
}

}  // namespace

OnnxScorer::OnnxScorer(Graph graph, std::string path) : graph_(std::move(graph)), path_(std::move(path)) {
  const auto& meta = graph_.metadata();
  const auto get = [&](const char* key, const std::string& fallback) {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  };

  const std::string pre = get("dpguard.preprocess", "image");
  if (pre == "image") {
    preprocess_ = Preprocess::kImage;
  } else if (pre == "baseline_features") {
    preprocess_ = Preprocess::kBaselineFeatures;
  } else {
    shape_error("unknown dpguard.preprocess '" + pre + "'");
  }

  const Shape& in = graph_.input_shape();
  if (preprocess_ == Preprocess::kImage) {
    if (in.size() != 4 || in[1] != 3 || in[2] <= 0 || in[3] <= 0) {
      shape_error("image input must be NCHW with 3 channels and fixed size, found " + shape_str(in));
    }
    height_ = static_cast<int>(in[2]);
    width_ = static_cast<int>(in[3]);
    scale_ = std::stof(get("dpguard.scale", std::to_string(1.0 / 255.0)));
    parse_triplet(get("dpguard.mean", "0"), mean_, "dpguard.mean");
    parse_triplet(get("dpguard.std", "1"), std_, "dpguard.std");
  } else {
    std::int64_t len = 1;
    for (auto d : in) len *= d < 0 ? 1 : d;
    if (in.empty() || in.back() != static_cast<std::int64_t>(classifier::kFeatureLength) ||
        len != static_cast<std::int64_t>(classifier::kFeatureLength)) {
      shape_error("baseline feature input must hold " + std::to_string(classifier::kFeatureLength) +
                  " values, found " + shape_str(in));
    }
  }

  const Shape& out = graph_.output_shape();
  std::int64_t width = 1;
  for (std::size_t i = 1; i < out.size(); ++i) width *= out[i] < 0 ? 1 : out[i];
  if (out.size() == 1) width = out[0] < 0 ? 1 : out[0];
  if (width != 1 && width != 2) {
    shape_error("model must output 1 probability or 2 logits, found " + std::to_string(width) +
                " values " + shape_str(out));
  }
  const std::string kind = get("dpguard.output", width == 2 ? "logits" : "probability");
  output_ = kind == "logits" ? Output::kLogits : Output::kProbability;
  sigmoid_logits_ = get("dpguard.logit_activation", "softmax") == "sigmoid";
  dp_index_ = std::stoi(get("dpguard.dp_index", "1"));
  if (width == 2 && (dp_index_ < 0 || dp_index_ > 1)) shape_error("dpguard.dp_index must be 0 or 1");
}

double OnnxScorer::score(const Image& image) const {
  Tensor input;
  if (preprocess_ == Preprocess::kBaselineFeatures) {
    const auto fv = classifier::featurize(image);
    input.shape = graph_.input_shape();
    for (auto& d : input.shape) d = d < 0 ? 1 : d;
    input.data.assign(fv.values.begin(), fv.values.end());
  } else {
    input.shape = {1, 3, height_, width_};
    input.data = resize_area_planar(image, width_, height_);
    const std::size_t plane = static_cast<std::size_t>(width_) * height_;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        float& v = input.data[c * plane + i];
        v = (v * scale_ - mean_[c]) / std_[c];
      }
    }
  }
  const Tensor y = graph_.run(input);
  if (y.data.empty()) shape_error("model produced no output");
  if (output_ == Output::kProbability) {
    if (y.data.size() == 2) return std::clamp(static_cast<double>(y.data[static_cast<std::size_t>(dp_index_)]), 0.0, 1.0);
    if (y.data.size() != 1) shape_error("probability output must hold 1 or 2 values");
    return std::clamp(static_cast<double>(y.data[0]), 0.0, 1.0);
  }
  if (y.data.size() != 2) shape_error("logit output must hold 2 values, found " + std::to_string(y.data.size()));
  const double dp = y.data[static_cast<std::size_t>(dp_index_)];
  const double other = y.data[static_cast<std::size_t>(1 - dp_index_)];
  if (sigmoid_logits_) return 1.0 / (1.0 + std::exp(-dp));
  return 1.0 / (1.0 + std::exp(other - dp));
}

std::unique_ptr<classifier::BinaryScorer> load_external_model(const std::string& path) {
  return std::make_unique<OnnxScorer>(Graph::load(path), path);
}

std::string export_baseline(const classifier::LogisticScorer& scorer) {
  const auto& model = scorer.model();
  const auto len = static_cast<std::int64_t>(model.weights.size());
  pb::ModelProto m;
  m.set_ir_version(8);
  m.set_producer_name("dpguard");
  auto* opset = m.add_opset_import();
  opset->set_domain("");
  opset->set_version(13);
  const auto meta = [&](const char* k, const char* v) {
    auto* kv = m.add_metadata_props();
    kv->set_key(k);
    kv->set_value(v);
  };
  meta("dpguard.preprocess", "baseline_features");
  meta("dpguard.output", "probability");

  auto* g = m.mutable_graph();
  g->set_name("dpguard_logistic_baseline");
  const auto value_info = [](pb::ValueInfoProto* v, const char* name, Shape dims) {
    v->set_name(name);
    auto* tt = v->mutable_type()->mutable_tensor_type();
    tt->set_elem_type(pb::TensorProto::FLOAT);
    for (auto d : dims) tt->mutable_shape()->add_dim()->set_dim_value(d);
  };
  value_info(g->add_input(), "features", {1, 1, 1, len});
  value_info(g->add_output(), "dp_probability", {1, 1});

  auto* w = g->add_initializer();
  w->set_name("weights");
  w->set_data_type(pb::TensorProto::FLOAT);
  w->add_dims(1);
  w->add_dims(len);
  for (double v : model.weights) w->add_float_data(static_cast<float>(v));
  auto* b = g->add_initializer();
  b->set_name("bias");
  b->set_data_type(pb::TensorProto::FLOAT);
  b->add_dims(1);
  b->add_float_data(static_cast<float>(model.bias));

  auto* flat = g->add_node();
  flat->set_op_type("Flatten");
  flat->add_input("features");
  flat->add_output("flat");
  auto* axis = flat->add_attribute();
  axis->set_name("axis");
  axis->set_type(pb::AttributeProto::INT);
  axis->set_i(1);

  auto* gemm = g->add_node();
  gemm->set_op_type("Gemm");
  gemm->add_input("flat");
  gemm->add_input("weights");
  gemm->add_input("bias");
  gemm->add_output("logit");
  auto* tb = gemm->add_attribute();
  tb->set_name("transB");
  tb->set_type(pb::AttributeProto::INT);
  tb->set_i(1);

  auto* sig = g->add_node();
  sig->set_op_type("Sigmoid");
  sig->add_input("logit");
  sig->add_output("dp_probability");

  std::string out;
  m.SerializeToString(&out);
  return out;
}

void export_baseline(const classifier::LogisticScorer& scorer, const std::string& path) {
  write_file_atomic(path, export_baseline(scorer));
}

}  // namespace dpguard::onnx
