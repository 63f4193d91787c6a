#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmonia/grouping.hpp"
#include "harmonia/matrix.hpp"
#include "harmonia/pipeline.hpp"

namespace harmonia {

enum class TensorDtype : uint32_t { f16 = 0, f32 = 1, f64 = 2 };

// "HRMT" container: version, ndim, dims (u64), dtype code, little-endian
// row-major payload.
struct TensorData {
    std::vector<uint64_t> dims;
    TensorDtype dtype = TensorDtype::f64;
    std::vector<double> values; // decoded payload (f16 payloads decode exactly)

    size_t element_count() const;
    Matrix as_matrix() const;                  // requires ndim == 2
    std::vector<Matrix> as_matrix_list() const; // ndim == 3 -> dims[0] samples
};

void write_tensor_file(const std::filesystem::path& path, const TensorData& t);
void write_tensor_file(const std::filesystem::path& path, const Matrix& m, TensorDtype dtype);
TensorData read_tensor_file(const std::filesystem::path& path);

// "HBFP" container: axis, group size, mantissa width, shape, residual length,
// then per-group records (biased exponent byte, bit-packed signs, packed
// magnitudes). Round-trips a BfpTensor bitwise.
class BfpFileCodec {
public:
    static void write(const std::filesystem::path& path, const BfpTensor& t);
    static BfpTensor read(const std::filesystem::path& path);
};

// Report JSON with a fixed key schema; validated before write.
nlohmann::json make_report(const ModelConfig& cfg, const RunSummary& run);
void validate_report(const nlohmann::json& report);
void write_report(const std::filesystem::path& path, const nlohmann::json& report);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// flattened sorted key paths ("a.b.c"), the schema-stability fingerprint
std::vector<std::string> report_key_paths(const nlohmann::json& report);

} // namespace harmonia
