#include "attngeom/inspector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace attngeom {

using json = nlohmann::json;

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F64: return "F64";
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
  }
  return "?";
}

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F64: return 8;
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::BF16: return 2;
  }
  return 0;
}

namespace {

Dtype dtype_from_name(const std::string& name, std::size_t err_pos) {
  if (name == "F64") return Dtype::F64;
  if (name == "F32") return Dtype::F32;
  if (name == "F16") return Dtype::F16;
  if (name == "BF16") return Dtype::BF16;
  throw ParseError("unsupported dtype \"" + name + "\"", err_pos);
}

std::uint32_t f32_bits(float v) {
  std::uint32_t b;
  std::memcpy(&b, &v, 4);
  return b;
}

float f32_from_bits(std::uint32_t b) {
  float v;
  std::memcpy(&v, &b, 4);
  return v;
}

}  // namespace

double f16_decode(std::uint16_t bits) {
  const std::uint32_t sign = (bits >> 15) & 1u;
  const std::uint32_t exp = (bits >> 10) & 0x1fu;
  const std::uint32_t mant = bits & 0x3ffu;
  double v;
  if (exp == 0)
    v = std::ldexp(static_cast<double>(mant), -24);  // subnormal
  else if (exp == 0x1f)
    v = mant ? std::nan("") : std::numeric_limits<double>::infinity();
  else
    v = std::ldexp(1.0 + static_cast<double>(mant) / 1024.0, static_cast<int>(exp) - 15);
  return sign ? -v : v;
}

std::uint16_t f16_encode(double v) {
  const std::uint16_t sign = std::signbit(v) ? 0x8000u : 0u;
  const double a = std::abs(v);
  if (std::isnan(v)) return sign | 0x7e00u;
  if (a >= 65520.0) return sign | 0x7c00u;  // overflow -> inf
  if (a < std::ldexp(1.0, -24 - 1)) return sign;
  int e;
  const double m = std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  const int exp = e - 1 + 15;
  if (exp <= 0) {
    // subnormal: round a / 2^-24
    const auto mant = static_cast<std::uint16_t>(std::lround(std::ldexp(a, 24)));
    return sign | mant;
  }
  auto mant = static_cast<std::uint32_t>(std::lround((m * 2.0 - 1.0) * 1024.0));
  std::uint32_t ebits = static_cast<std::uint32_t>(exp);
  if (mant == 1024) {  // rounding overflowed the mantissa
    mant = 0;
    ++ebits;
    if (ebits >= 0x1f) return sign | 0x7c00u;
  }
  return static_cast<std::uint16_t>(sign | (ebits << 10) | mant);
}

double bf16_decode(std::uint16_t bits) {
  return static_cast<double>(f32_from_bits(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t bf16_encode(double v) {
  const std::uint32_t b = f32_bits(static_cast<float>(v));
  // round-to-nearest-even on the dropped 16 bits
  const std::uint32_t lsb = (b >> 16) & 1u;
  return static_cast<std::uint16_t>((b + 0x7fffu + lsb) >> 16);
}

Matrix TensorEntry::to_matrix() const {
  if (shape.size() != 2)
    throw ShapeError("TensorEntry: expected 2-D tensor, got " +
                     std::to_string(shape.size()) + " dims");
  Matrix m(shape[0], shape[1]);
  const std::size_t n = shape[0] * shape[1];
  const std::uint8_t* p = raw.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case Dtype::F64: {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        m.data()[i] = v;
        break;
      }
      case Dtype::F32: {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        m.data()[i] = static_cast<double>(v);
        break;
      }
      case Dtype::F16: {
        std::uint16_t b;
        std::memcpy(&b, p + 2 * i, 2);
        m.data()[i] = f16_decode(b);
        break;
      }
      case Dtype::BF16: {
        std::uint16_t b;
        std::memcpy(&b, p + 2 * i, 2);
        m.data()[i] = bf16_decode(b);
        break;
      }
    }
  }
  return m;
}

TensorEntry TensorEntry::from_matrix(const Matrix& m, Dtype dtype) {
  TensorEntry e;
  e.dtype = dtype;
  e.shape = {m.rows(), m.cols()};
  e.raw.resize(m.size() * dtype_size(dtype));
  std::uint8_t* p = e.raw.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    switch (dtype) {
      case Dtype::F64:
        std::memcpy(p + 8 * i, &v, 8);
        break;
      case Dtype::F32: {
        const float f = static_cast<float>(v);
        std::memcpy(p + 4 * i, &f, 4);
        break;
      }
      case Dtype::F16: {
        const std::uint16_t b = f16_encode(v);
        std::memcpy(p + 2 * i, &b, 2);
        break;
      }
      case Dtype::BF16: {
        const std::uint16_t b = bf16_encode(v);
        std::memcpy(p + 2 * i, &b, 2);
        break;
      }
    }
  }
  return e;
}

WeightContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open \"" + path + "\"", 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw ParseError("file shorter than the 8-byte length prefix", 0);

  std::uint64_t header_len = 0;
  for (std::size_t i = 0; i < 8; ++i)
    header_len |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (8 + header_len > bytes.size())
    throw ParseError("header length " + std::to_string(header_len) +
                         " exceeds file size " + std::to_string(bytes.size()),
                     0);

  const std::string header_text(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON header: ") + e.what(),
                     8 + static_cast<std::size_t>(e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!header.is_object()) throw ParseError("header is not a JSON object", 8);

  const std::size_t data_start = 8 + header_len;
  const std::size_t data_size = bytes.size() - data_start;

  WeightContainer container;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto& [name, meta] : header.items()) {
    if (name == "__metadata__") continue;
    if (!meta.is_object() || !meta.contains("dtype") || !meta.contains("shape") ||
        !meta.contains("data_offsets"))
      throw ParseError("tensor \"" + name + "\": missing dtype/shape/data_offsets", 8);
    TensorEntry entry;
    entry.dtype = dtype_from_name(meta["dtype"].get<std::string>(), 8);
    entry.shape = meta["shape"].get<std::vector<std::size_t>>();
    const auto offsets = meta["data_offsets"].get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0])
      throw ParseError("tensor \"" + name + "\": bad data_offsets", 8);
    const std::size_t begin = offsets[0], end = offsets[1];
    if (end > data_size)
      throw ParseError("tensor \"" + name + "\": data_offsets past end of buffer",
                       data_start + begin);
    std::size_t count = 1;
    for (std::size_t s : entry.shape) count *= s;
    if (end - begin != count * dtype_size(entry.dtype))
      throw ParseError("tensor \"" + name + "\": buffer length " +
                           std::to_string(end - begin) + " != shape product",
                       data_start + begin);
    ranges.emplace_back(begin, end);
    entry.raw.assign(bytes.begin() + data_start + begin, bytes.begin() + data_start + end);
    if (!container.tensors.emplace(name, std::move(entry)).second)
      throw ParseError("duplicate tensor name \"" + name + "\"", 8);
  }

  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i)
    if (ranges[i].first < ranges[i - 1].second)
      throw ParseError("overlapping tensor buffers", data_start + ranges[i].first);

  return container;
}

std::vector<std::uint8_t> serialize_container(const WeightContainer& container) {
  json header = json::object();
  std::size_t offset = 0;
  for (const auto& [name, entry] : container.tensors) {  // std::map: sorted names
    header[name] = {{"dtype", dtype_name(entry.dtype)},
                    {"shape", entry.shape},
                    {"data_offsets", {offset, offset + entry.raw.size()}}};
    offset += entry.raw.size();
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + header_text.size() + offset);
  const std::uint64_t header_len = header_text.size();
  for (std::size_t i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>((header_len >> (8 * i)) & 0xff));
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (const auto& [name, entry] : container.tensors)
    out.insert(out.end(), entry.raw.begin(), entry.raw.end());
  return out;
}

void save_container(const WeightContainer& container, const std::string& path) {
  const auto bytes = serialize_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_container: cannot open \"" + path + "\"");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

WeightContainer container_from_params(const ModelParams& params) {
  WeightContainer c;
  c.tensors["w_e"] = TensorEntry::from_matrix(params.w_e);
  c.tensors["w_p"] = TensorEntry::from_matrix(params.w_p);
  c.tensors["w_u"] = TensorEntry::from_matrix(params.w_u);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    c.tensors[prefix + "w_q"] = TensorEntry::from_matrix(params.layers[l].w_q);
    c.tensors[prefix + "w_k"] = TensorEntry::from_matrix(params.layers[l].w_k);
    c.tensors[prefix + "w_v"] = TensorEntry::from_matrix(params.layers[l].w_v);
    c.tensors[prefix + "w_1"] = TensorEntry::from_matrix(params.layers[l].w_1);
    c.tensors[prefix + "w_2"] = TensorEntry::from_matrix(params.layers[l].w_2);
  }
  return c;
}

ModelParams params_from_container(const WeightContainer& container) {
  auto need = [&](const std::string& name) -> Matrix {
    auto it = container.tensors.find(name);
    if (it == container.tensors.end())
      throw std::runtime_error("params_from_container: missing tensor \"" + name + "\"");
    return it->second.to_matrix();
  };
  ModelParams p;
  p.w_e = need("w_e");
  p.w_p = need("w_p");
  p.w_u = need("w_u");
  for (std::size_t l = 0;; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    if (container.tensors.find(prefix + "w_q") == container.tensors.end()) break;
    LayerParams lp;
    lp.w_q = need(prefix + "w_q");
    lp.w_k = need(prefix + "w_k");
    lp.w_v = need(prefix + "w_v");
    lp.w_1 = need(prefix + "w_1");
    lp.w_2 = need(prefix + "w_2");
    p.layers.push_back(std::move(lp));
  }
  if (p.layers.empty())
    throw std::runtime_error("params_from_container: no layers found");
  return p;
}

namespace {

std::string substitute_layer(const std::string& pattern, std::size_t layer) {
  const std::size_t pos = pattern.find("{}");
  if (pos == std::string::npos)
    throw std::invalid_argument("pattern \"" + pattern + "\" has no {} placeholder");
  return pattern.substr(0, pos) + std::to_string(layer) + pattern.substr(pos + 2);
}

Matrix row_slice(const Matrix& m, std::size_t r0, std::size_t r1) {
  if (r1 > m.rows() || r0 >= r1)
    throw ShapeError("slice [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") out of range for " + m.shape_str());
  Matrix out(r1 - r0, m.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i - r0, j) = m(i, j);
  return out;
}

}  // namespace

LayerPattern parse_pattern(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("pattern config: invalid JSON: ") + e.what());
  }
  for (const char* key : {"query_pattern", "key_pattern", "num_heads", "transpose_key"})
    if (!j.contains(key))
      throw std::invalid_argument(std::string("pattern config: missing \"") + key + "\"");
  LayerPattern p;
  p.query_pattern = j["query_pattern"].get<std::string>();
  p.key_pattern = j["key_pattern"].get<std::string>();
  p.num_heads = j["num_heads"].get<std::size_t>();
  p.transpose_key = j["transpose_key"].get<bool>();
  if (j.contains("slices")) {
    const json& s = j["slices"];
    if (s.contains("query")) {
      const auto r = s["query"].get<std::vector<std::size_t>>();
      if (r.size() != 2) throw std::invalid_argument("pattern config: query slice needs 2 entries");
      p.query_slice = {r[0], r[1]};
    }
    if (s.contains("key")) {
      const auto r = s["key"].get<std::vector<std::size_t>>();
      if (r.size() != 2) throw std::invalid_argument("pattern config: key slice needs 2 entries");
      p.key_slice = {r[0], r[1]};
    }
  }
  if (p.num_heads < 1)
    throw std::invalid_argument("pattern config: num_heads must be >= 1");
  return p;
}

std::vector<Matrix> extract_wqk(const WeightContainer& container, const LayerPattern& pattern) {
  std::vector<Matrix> out;
  for (std::size_t layer = 0;; ++layer) {
    const std::string q_name = substitute_layer(pattern.query_pattern, layer);
    const std::string k_name = substitute_layer(pattern.key_pattern, layer);
    const auto q_it = container.tensors.find(q_name);
    const auto k_it = container.tensors.find(k_name);
    if (q_it == container.tensors.end() && k_it == container.tensors.end()) break;
    if (q_it == container.tensors.end() || k_it == container.tensors.end())
      throw std::runtime_error("extract_wqk: layer " + std::to_string(layer) +
                               " has only one of q/k");
    Matrix q = q_it->second.to_matrix();
    Matrix k = k_it->second.to_matrix();
    if (pattern.query_slice) q = row_slice(q, pattern.query_slice->first, pattern.query_slice->second);
    if (pattern.key_slice) k = row_slice(k, pattern.key_slice->first, pattern.key_slice->second);
    if (!q.same_shape(k))
      throw ShapeError("extract_wqk: layer " + std::to_string(layer) + " q " +
                       q.shape_str() + " vs k " + k.shape_str());
    // out x in storage composes as W_q^T W_k; in x out as W_q W_k^T. Either way
    // the full d x d product equals the sum of per-head block products.
    out.push_back(pattern.transpose_key ? matmul(transpose(q), k)
                                        : matmul(q, transpose(k)));
  }
  if (out.empty())
    throw std::runtime_error("extract_wqk: pattern matched no layers");
  return out;
}

std::uint64_t matrix_checksum(const Matrix& m) {
  std::uint64_t h = 14695981039346656037ull;
  for (double v : m.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (std::size_t i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffull;
      h *= 1099511628211ull;
    }
  }
  return h;
}

InspectResult inspect_report(const WeightContainer& container, const LayerPattern& pattern,
                             double gamma) {
  InspectResult result;
  result.wqk = extract_wqk(container, pattern);
  result.report = layer_summary(result.wqk, gamma);
  std::ostringstream csv;
  csv << "# attention-geometry v1\n";
  csv << "layer,s,d,checksum\n";
  csv.precision(17);
  for (std::size_t l = 0; l < result.wqk.size(); ++l) {
    const LayerScore& ls = result.report.per_layer[l];
    csv << l << ',' << ls.s << ',' << ls.d << ',' << matrix_checksum(result.wqk[l]) << '\n';
  }
  result.csv = csv.str();
  return result;
}

}  // namespace attngeom
