#pragma once

// In-memory subset of the ONNX ModelProto schema, with parsing from and
// serialization to the protobuf wire format. Field numbers follow onnx.proto.

#include <cstdint>
#include <cstring>
#include <optional>
#include <type_traits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sptd/error.hpp"
#include "sptd/onnx/protobuf.hpp"

namespace sptd::onnx {

enum DataType : std::int32_t { kFloat = 1, kUint8 = 2, kInt8 = 3, kInt32 = 6, kInt64 = 7, kBool = 9, kDouble = 11 };

struct TensorProto {
  std::string name;
  std::vector<std::int64_t> dims;
  std::int32_t data_type = kFloat;
  std::vector<float> floats;       // kFloat / kDouble payloads
  std::vector<std::int64_t> ints;  // integer payloads

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  bool is_integer() const { return data_type != kFloat && data_type != kDouble; }
};

enum AttributeType : std::int32_t { kAttrFloat = 1, kAttrInt = 2, kAttrString = 3, kAttrTensor = 4, kAttrFloats = 6, kAttrInts = 7 };

struct AttributeProto {
  std::string name;
  std::int32_t type = 0;
  float f = 0.0f;
  std::int64_t i = 0;
  std::string s;
  std::optional<TensorProto> t;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
};

struct NodeProto {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string name;
  std::string op_type;
  std::string domain;
  std::vector<AttributeProto> attributes;

  const AttributeProto* attr(std::string_view n) const {
    for (const auto& a : attributes)
      if (a.name == n) return &a;
    return nullptr;
  }
  std::int64_t attr_int(std::string_view n, std::int64_t def) const {
    const auto* a = attr(n);
    return a ? a->i : def;
  }
  float attr_float(std::string_view n, float def) const {
    const auto* a = attr(n);
    return a ? a->f : def;
  }
  std::vector<std::int64_t> attr_ints(std::string_view n, std::vector<std::int64_t> def = {}) const {
    const auto* a = attr(n);
    return a ? a->ints : def;
  }
  std::string attr_string(std::string_view n, std::string def = {}) const {
    const auto* a = attr(n);
    return a ? a->s : def;
  }
};

// Tensor value info. A dimension of -1 is symbolic (dim_param) or unknown.
struct ValueInfoProto {
  std::string name;
  std::int32_t elem_type = kFloat;
  bool has_shape = false;
  std::vector<std::int64_t> dims;
};

struct GraphProto {
  std::string name;
  std::vector<NodeProto> nodes;
  std::vector<TensorProto> initializers;
  std::vector<ValueInfoProto> inputs;
  std::vector<ValueInfoProto> outputs;
};

struct ModelProto {
  std::int64_t ir_version = 8;
  std::string producer_name;
  std::vector<std::pair<std::string, std::int64_t>> opsets{{"", 13}};
  GraphProto graph;
};

namespace detail {

template <class T, class Fn>
void read_packed_or_single(const pb::Field& f, std::vector<T>& out, Fn convert) {
  if (f.type == pb::WireType::Bytes) {
    pb::Reader r(f.bytes);
    if constexpr (std::is_floating_point_v<T>) {
      for (std::size_t i = 0; i + 4 <= f.bytes.size(); i += 4) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(f.bytes[i + b])) << (8 * b);
        out.push_back(convert(bits));
      }
    } else {
      while (!r.done()) out.push_back(convert(r.varint()));
    }
  } else {
    out.push_back(convert(f.scalar));
  }
}

inline TensorProto parse_tensor(std::string_view bytes) {
  TensorProto t;
  std::string_view raw;
  bool has_raw = false;
  std::vector<double> doubles;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    switch (f.number) {
      case 1: read_packed_or_single(f, t.dims, [](std::uint64_t v) { return static_cast<std::int64_t>(v); }); break;
      case 2: t.data_type = static_cast<std::int32_t>(f.scalar); break;
      case 4: read_packed_or_single(f, t.floats, [](std::uint64_t v) { return pb::as_float(v); }); break;
      case 5:
        read_packed_or_single(f, t.ints, [](std::uint64_t v) { return static_cast<std::int64_t>(static_cast<std::int32_t>(v)); });
        break;
      case 7: read_packed_or_single(f, t.ints, [](std::uint64_t v) { return static_cast<std::int64_t>(v); }); break;
      case 8: t.name = std::string(f.bytes); break;
      case 9:
        raw = f.bytes;
        has_raw = true;
        break;
      case 10:
        if (f.type == pb::WireType::Bytes) {
          for (std::size_t i = 0; i + 8 <= f.bytes.size(); i += 8) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(f.bytes[i + b])) << (8 * b);
            doubles.push_back(pb::as_double(bits));
          }
        } else {
          doubles.push_back(pb::as_double(f.scalar));
        }
        break;
      case 14:
        if (f.scalar != 0) fail(ErrorCode::UnsupportedGraph, "tensor '" + t.name + "' uses external data");
        break;
      default: break;
    }
  }
  for (double d : doubles) t.floats.push_back(static_cast<float>(d));
  if (has_raw) {
    auto le = [&](std::size_t off, int n) {
      std::uint64_t v = 0;
      for (int b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(raw[off + b])) << (8 * b);
      return v;
    };
    switch (t.data_type) {
      case kFloat:
        for (std::size_t i = 0; i + 4 <= raw.size(); i += 4) t.floats.push_back(pb::as_float(le(i, 4)));
        break;
      case kDouble:
        for (std::size_t i = 0; i + 8 <= raw.size(); i += 8) t.floats.push_back(static_cast<float>(pb::as_double(le(i, 8))));
        break;
      case kInt64:
        for (std::size_t i = 0; i + 8 <= raw.size(); i += 8) t.ints.push_back(static_cast<std::int64_t>(le(i, 8)));
        break;
      case kInt32:
        for (std::size_t i = 0; i + 4 <= raw.size(); i += 4)
          t.ints.push_back(static_cast<std::int32_t>(static_cast<std::uint32_t>(le(i, 4))));
        break;
      case kUint8:
      case kBool:
        for (char c : raw) t.ints.push_back(static_cast<std::uint8_t>(c));
        break;
      case kInt8:
        for (char c : raw) t.ints.push_back(static_cast<std::int8_t>(c));
        break;
      default:
        fail(ErrorCode::UnsupportedGraph, "tensor '" + t.name + "' has unsupported data type " + std::to_string(t.data_type));
    }
  }
  const std::size_t have = t.is_integer() ? t.ints.size() : t.floats.size();
  if (have != t.element_count())
    fail(ErrorCode::UnsupportedGraph, "tensor '" + t.name + "' payload has " + std::to_string(have) + " elements, dims need " +
                                          std::to_string(t.element_count()));
  return t;
}

inline AttributeProto parse_attribute(std::string_view bytes) {
  AttributeProto a;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    switch (f.number) {
      case 1: a.name = std::string(f.bytes); break;
      case 2: a.f = pb::as_float(f.scalar); break;
      case 3: a.i = static_cast<std::int64_t>(f.scalar); break;
      case 4: a.s = std::string(f.bytes); break;
      case 5: a.t = parse_tensor(f.bytes); break;
      case 7: read_packed_or_single(f, a.floats, [](std::uint64_t v) { return pb::as_float(v); }); break;
      case 8: read_packed_or_single(f, a.ints, [](std::uint64_t v) { return static_cast<std::int64_t>(v); }); break;
      case 20: a.type = static_cast<std::int32_t>(f.scalar); break;
      default: break;
    }
  }
  return a;
}

inline NodeProto parse_node(std::string_view bytes) {
  NodeProto n;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    switch (f.number) {
      case 1: n.inputs.emplace_back(f.bytes); break;
      case 2: n.outputs.emplace_back(f.bytes); break;
      case 3: n.name = std::string(f.bytes); break;
      case 4: n.op_type = std::string(f.bytes); break;
      case 5: n.attributes.push_back(parse_attribute(f.bytes)); break;
      case 7: n.domain = std::string(f.bytes); break;
      default: break;
    }
  }
  return n;
}

inline ValueInfoProto parse_value_info(std::string_view bytes) {
  ValueInfoProto v;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    if (f.number == 1) {
      v.name = std::string(f.bytes);
    } else if (f.number == 2) {  // TypeProto
      pb::Reader tr(f.bytes);
      pb::Field tf;
      while (tr.next(tf)) {
        if (tf.number != 1) continue;  // tensor_type
        pb::Reader ttr(tf.bytes);
        pb::Field ttf;
        while (ttr.next(ttf)) {
          if (ttf.number == 1) {
            v.elem_type = static_cast<std::int32_t>(ttf.scalar);
          } else if (ttf.number == 2) {  // TensorShapeProto
            v.has_shape = true;
            pb::Reader sr(ttf.bytes);
            pb::Field sf;
            while (sr.next(sf)) {
              if (sf.number != 1) continue;
              std::int64_t dim = -1;
              pb::Reader dr(sf.bytes);
              pb::Field df;
              while (dr.next(df))
                if (df.number == 1) dim = static_cast<std::int64_t>(df.scalar);
              v.dims.push_back(dim);
            }
          }
        }
      }
    }
  }
  return v;
}

inline GraphProto parse_graph(std::string_view bytes) {
  GraphProto g;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    switch (f.number) {
      case 1: g.nodes.push_back(parse_node(f.bytes)); break;
      case 2: g.name = std::string(f.bytes); break;
      case 5: g.initializers.push_back(parse_tensor(f.bytes)); break;
      case 11: g.inputs.push_back(parse_value_info(f.bytes)); break;
      case 12: g.outputs.push_back(parse_value_info(f.bytes)); break;
      default: break;
    }
  }
  return g;
}

inline pb::Writer write_tensor(const TensorProto& t) {
  pb::Writer w;
  for (auto d : t.dims) w.int_field(1, d);
  w.int_field(2, t.data_type);
  w.bytes_field(8, t.name);
  std::string raw;
  if (t.data_type == kFloat) {
    raw.resize(4 * t.floats.size());
    for (std::size_t i = 0; i < t.floats.size(); ++i) {
      std::uint32_t b;
      std::memcpy(&b, &t.floats[i], 4);
      for (int k = 0; k < 4; ++k) raw[4 * i + k] = static_cast<char>((b >> (8 * k)) & 0xff);
    }
  } else if (t.data_type == kInt64) {
    raw.resize(8 * t.ints.size());
    for (std::size_t i = 0; i < t.ints.size(); ++i) {
      const auto b = static_cast<std::uint64_t>(t.ints[i]);
      for (int k = 0; k < 8; ++k) raw[8 * i + k] = static_cast<char>((b >> (8 * k)) & 0xff);
    }
  } else {
    fail(ErrorCode::UnsupportedGraph, "serializer handles float and int64 tensors only");
  }
  w.bytes_field(9, raw);
  return w;
}

inline pb::Writer write_attribute(const AttributeProto& a) {
  pb::Writer w;
  w.bytes_field(1, a.name);
  switch (a.type) {
    case kAttrFloat: w.float_field(2, a.f); break;
    case kAttrInt: w.int_field(3, a.i); break;
    case kAttrString: w.bytes_field(4, a.s); break;
    case kAttrTensor: w.message_field(5, write_tensor(*a.t)); break;
    case kAttrFloats:
      for (float v : a.floats) w.float_field(7, v);
      break;
    case kAttrInts:
      for (auto v : a.ints) w.int_field(8, v);
      break;
    default: fail(ErrorCode::UnsupportedGraph, "cannot serialize attribute '" + a.name + "'");
  }
  w.int_field(20, a.type);
  return w;
}

inline pb::Writer write_value_info(const ValueInfoProto& v) {
  pb::Writer shape;
  for (auto d : v.dims) {
    pb::Writer dim;
    if (d >= 0)
      dim.int_field(1, d);
    else
      dim.bytes_field(2, "N");
    shape.message_field(1, dim);
  }
  pb::Writer tensor_type;
  tensor_type.int_field(1, v.elem_type);
  if (v.has_shape) tensor_type.message_field(2, shape);
  pb::Writer type;
  type.message_field(1, tensor_type);
  pb::Writer w;
  w.bytes_field(1, v.name);
  w.message_field(2, type);
  return w;
}

}  // namespace detail

inline ModelProto parse_model(std::string_view bytes) {
  ModelProto m;
  m.opsets.clear();
  bool has_graph = false;
  pb::Reader r(bytes);
  pb::Field f;
  while (r.next(f)) {
    switch (f.number) {
      case 1: m.ir_version = static_cast<std::int64_t>(f.scalar); break;
      case 2: m.producer_name = std::string(f.bytes); break;
      case 7:
        m.graph = detail::parse_graph(f.bytes);
        has_graph = true;
        break;
      case 8: {
        std::pair<std::string, std::int64_t> op{"", 0};
        pb::Reader orr(f.bytes);
        pb::Field of;
        while (orr.next(of)) {
          if (of.number == 1) op.first = std::string(of.bytes);
          if (of.number == 2) op.second = static_cast<std::int64_t>(of.scalar);
        }
        m.opsets.push_back(op);
        break;
      }
      default: break;
    }
  }
  if (!has_graph) fail(ErrorCode::UnsupportedGraph, "model has no graph");
  return m;
}

inline std::string serialize_model(const ModelProto& m) {
  pb::Writer graph;
  for (const auto& n : m.graph.nodes) {
    pb::Writer node;
    for (const auto& i : n.inputs) node.bytes_field(1, i);
    for (const auto& o : n.outputs) node.bytes_field(2, o);
    node.bytes_field(3, n.name);
    node.bytes_field(4, n.op_type);
    for (const auto& a : n.attributes) node.message_field(5, detail::write_attribute(a));
    if (!n.domain.empty()) node.bytes_field(7, n.domain);
    graph.message_field(1, node);
  }
  graph.bytes_field(2, m.graph.name);
  for (const auto& t : m.graph.initializers) graph.message_field(5, detail::write_tensor(t));
  for (const auto& v : m.graph.inputs) graph.message_field(11, detail::write_value_info(v));
  for (const auto& v : m.graph.outputs) graph.message_field(12, detail::write_value_info(v));

  pb::Writer model;
  model.int_field(1, m.ir_version);
  if (!m.producer_name.empty()) model.bytes_field(2, m.producer_name);
  model.message_field(7, graph);
  for (const auto& [domain, version] : m.opsets) {
    pb::Writer op;
    if (!domain.empty()) op.bytes_field(1, domain);
    op.int_field(2, version);
    model.message_field(8, op);
  }
  return model.str();
}

// Small builders for assembling graphs in code.
inline AttributeProto attr_int(std::string name, std::int64_t v) {
  AttributeProto a;
  a.name = std::move(name);
  a.type = kAttrInt;
  a.i = v;
  return a;
}
inline AttributeProto attr_float(std::string name, float v) {
  AttributeProto a;
  a.name = std::move(name);
  a.type = kAttrFloat;
  a.f = v;
  return a;
}
inline AttributeProto attr_ints(std::string name, std::vector<std::int64_t> v) {
  AttributeProto a;
  a.name = std::move(name);
  a.type = kAttrInts;
  a.ints = std::move(v);
  return a;
}
inline TensorProto float_tensor(std::string name, std::vector<std::int64_t> dims, std::vector<float> data) {
  TensorProto t;
  t.name = std::move(name);
  t.dims = std::move(dims);
  t.data_type = kFloat;
  t.floats = std::move(data);
  return t;
}
inline TensorProto int64_tensor(std::string name, std::vector<std::int64_t> dims, std::vector<std::int64_t> data) {
  TensorProto t;
  t.name = std::move(name);
  t.dims = std::move(dims);
  t.data_type = kInt64;
  t.ints = std::move(data);
  return t;
}
inline NodeProto node(std::string op, std::vector<std::string> inputs, std::vector<std::string> outputs,
                      std::vector<AttributeProto> attrs = {}) {
  NodeProto n;
  n.op_type = std::move(op);
  n.name = n.op_type + "_" + (outputs.empty() ? std::string("out") : outputs.front());
  n.inputs = std::move(inputs);
  n.outputs = std::move(outputs);
  n.attributes = std::move(attrs);
  return n;
}
inline ValueInfoProto value_info(std::string name, std::vector<std::int64_t> dims) {
  ValueInfoProto v;
  v.name = std::move(name);
  v.has_shape = true;
  v.dims = std::move(dims);
  return v;
}

}  // namespace sptd::onnx
