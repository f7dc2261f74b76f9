#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attngeom/matrix.hpp"
#include "attngeom/scores.hpp"
#include "attngeom/transformer.hpp"

namespace attngeom {

/// Container parse failure; byte_pos points at the offending location.
struct ParseError : std::runtime_error {
  std::size_t byte_pos;
  ParseError(const std::string& what, std::size_t pos)
      : std::runtime_error(what + " (byte " + std::to_string(pos) + ")"), byte_pos(pos) {}
};

enum class Dtype { F64, F32, F16, BF16 };

const char* dtype_name(Dtype d);
std::size_t dtype_size(Dtype d);

std::uint16_t f16_encode(double v);
double f16_decode(std::uint16_t bits);
std::uint16_t bf16_encode(double v);
double bf16_decode(std::uint16_t bits);

struct TensorEntry {
  Dtype dtype = Dtype::F64;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> raw;  // little-endian, len == product(shape) * dtype_size

  /// Widens to 64-bit. Requires a 2-D shape.
  Matrix to_matrix() const;
  static TensorEntry from_matrix(const Matrix& m, Dtype dtype = Dtype::F64);
};

/// Tensor file in the de-facto single-file layout: 8-byte little-endian
/// header length, JSON header {name: {dtype, shape, data_offsets}}, raw
/// buffer. Names are kept sorted so save() is canonical and load-save-load
/// round-trips byte-identically.
struct WeightContainer {
  std::map<std::string, TensorEntry> tensors;
};

WeightContainer load_container(const std::string& path);
std::vector<std::uint8_t> serialize_container(const WeightContainer& container);
void save_container(const WeightContainer& container, const std::string& path);

/// Model checkpoint <-> container with names w_e, w_p, w_u, layers.{l}.w_q|w_k|w_v|w_1|w_2.
WeightContainer container_from_params(const ModelParams& params);
ModelParams params_from_container(const WeightContainer& container);

/// Where to find per-layer query/key weights. Patterns contain one "{}"
/// placeholder for the layer index. transpose_key=true means the checkpoint
/// stores projection weights as output-dim x input-dim (the common PyTorch
/// convention), so W_qk = W_q_stored^T . W_k_stored; false means stored as
/// input x output and W_qk = W_q_stored . W_k_stored^T. Optional row slices
/// [begin, end) select the q/k blocks out of fused qkv tensors.
struct LayerPattern {
  std::string query_pattern;
  std::string key_pattern;
  std::size_t num_heads = 1;
  bool transpose_key = true;
  std::optional<std::pair<std::size_t, std::size_t>> query_slice;
  std::optional<std::pair<std::size_t, std::size_t>> key_slice;
};

/// Parses the JSON pattern config {query_pattern, key_pattern, num_heads,
/// transpose_key, slices?}; transpose_key is mandatory.
LayerPattern parse_pattern(const std::string& json_text);

/// One W_qk per layer, walking layer indices 0,1,... until the pattern stops
/// matching. Throws if layer 0 is absent or q/k shapes disagree.
std::vector<Matrix> extract_wqk(const WeightContainer& container, const LayerPattern& pattern);

struct InspectResult {
  ScoreReport report;
  std::vector<Matrix> wqk;
  std::string csv;  // layer, s, d, row-major FNV-1a checksum of W_qk
};

InspectResult inspect_report(const WeightContainer& container, const LayerPattern& pattern,
                             double gamma);

/// FNV-1a over the row-major f64 bytes of the matrix.
std::uint64_t matrix_checksum(const Matrix& m);

}  // namespace attngeom
