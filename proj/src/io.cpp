#include "harmonia/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "harmonia/error.hpp"

static_assert(std::endian::native == std::endian::little, "file formats are little-endian");

namespace harmonia {

namespace {

constexpr uint32_t kTensorVersion = 1;
constexpr uint32_t kBfpVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) raise(Errc::format, "unexpected end of file");
    return v;
}

void put_magic(std::ostream& os, const char* magic) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char* magic, const char* what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0) raise(Errc::format, std::string("bad magic for ") + what);
}

size_t dtype_size(TensorDtype d) {
    switch (d) {
        case TensorDtype::f16: return 2;
        case TensorDtype::f32: return 4;
        case TensorDtype::f64: return 8;
    }
    raise(Errc::format, "unknown dtype code");
}

} // namespace

size_t TensorData::element_count() const {
    size_t n = 1;
    for (uint64_t d : dims) n *= static_cast<size_t>(d);
    return dims.empty() ? 0 : n;
}

Matrix TensorData::as_matrix() const {
    if (dims.size() != 2) raise(Errc::shape, "tensor is not 2-D");
    Matrix m(static_cast<size_t>(dims[0]), static_cast<size_t>(dims[1]));
    m.data() = values;
    return m;
}

std::vector<Matrix> TensorData::as_matrix_list() const {
    if (dims.size() != 3) raise(Errc::shape, "tensor is not 3-D");
    size_t s = dims[0], r = dims[1], c = dims[2];
    std::vector<Matrix> out;
    out.reserve(s);
    for (size_t i = 0; i < s; ++i) {
        Matrix m(r, c);
        std::copy(values.begin() + i * r * c, values.begin() + (i + 1) * r * c, m.data().begin());
        out.push_back(std::move(m));
    }
    return out;
}

void write_tensor_file(const std::filesystem::path& path, const TensorData& t) {
    if (t.values.size() != t.element_count()) raise(Errc::format, "payload does not match dims");
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(Errc::format, "cannot open " + path.string() + " for writing");
    put_magic(os, "HRMT");
    put<uint32_t>(os, kTensorVersion);
    put<uint32_t>(os, static_cast<uint32_t>(t.dims.size()));
    for (uint64_t d : t.dims) put<uint64_t>(os, d);
    put<uint32_t>(os, static_cast<uint32_t>(t.dtype));
    switch (t.dtype) {
        case TensorDtype::f16:
            for (double v : t.values) put<uint16_t>(os, Half::from_double(v).bits);
            break;
        case TensorDtype::f32:
            for (double v : t.values) put<float>(os, static_cast<float>(v));
            break;
        case TensorDtype::f64:
            for (double v : t.values) put<double>(os, v);
            break;
    }
    if (!os) raise(Errc::format, "write failed: " + path.string());
}

void write_tensor_file(const std::filesystem::path& path, const Matrix& m, TensorDtype dtype) {
    TensorData t;
    t.dims = {m.rows(), m.cols()};
    t.dtype = dtype;
    t.values = m.data();
    write_tensor_file(path, t);
}

TensorData read_tensor_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::format, "cannot open " + path.string());
    expect_magic(is, "HRMT", "tensor file");
    uint32_t version = get<uint32_t>(is);
    if (version != kTensorVersion) raise(Errc::format, "unsupported tensor file version");
    uint32_t ndim = get<uint32_t>(is);
    if (ndim == 0 || ndim > 8) raise(Errc::format, "bad tensor rank");
    TensorData t;
    for (uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get<uint64_t>(is));
    uint32_t code = get<uint32_t>(is);
    if (code > 2) raise(Errc::format, "unknown dtype code");
    t.dtype = static_cast<TensorDtype>(code);
    size_t n = t.element_count();
    if (n > (1u << 28)) raise(Errc::format, "tensor too large");
    t.values.resize(n);
    for (size_t i = 0; i < n; ++i) {
        switch (t.dtype) {
            case TensorDtype::f16: t.values[i] = Half(get<uint16_t>(is)).to_double(); break;
            case TensorDtype::f32: t.values[i] = static_cast<double>(get<float>(is)); break;
            case TensorDtype::f64: t.values[i] = get<double>(is); break;
        }
    }
    char extra;
    if (is.read(&extra, 1)) raise(Errc::format, "trailing bytes in tensor file");
    (void)dtype_size(t.dtype);
    return t;
}

namespace {


void write_group(std::ostream& os, const BfpGroup& g) {
    put<uint8_t>(os, static_cast<uint8_t>(g.shared_exp() + 15));
    size_t len = g.size();
    std::vector<uint8_t> signs((len + 7) / 8, 0);
    for (size_t i = 0; i < len; ++i) {
        if (g.negative(i)) signs[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    }
    os.write(reinterpret_cast<const char*>(signs.data()), signs.size());
    int m = g.mantissa_bits();
    if (m <= 4) {
        std::vector<uint8_t> packed((len + 1) / 2, 0);
        for (size_t i = 0; i < len; ++i) {
            uint8_t nib = static_cast<uint8_t>(g.magnitude(i) & 0xF);
            packed[i / 2] |= static_cast<uint8_t>(i % 2 ? nib << 4 : nib);
        }
        os.write(reinterpret_cast<const char*>(packed.data()), packed.size());
    } else if (m <= 8) {
        for (size_t i = 0; i < len; ++i) put<uint8_t>(os, static_cast<uint8_t>(g.magnitude(i)));
    } else {
        for (size_t i = 0; i < len; ++i) put<uint16_t>(os, g.magnitude(i));
    }
}

BfpGroup read_group(std::istream& is, int m, size_t len) {
    uint8_t biased = get<uint8_t>(is);
    int exp = static_cast<int>(biased) - 15;
    if (exp < -14 || exp > 15) raise(Errc::format, "shared exponent out of range");
    std::vector<uint8_t> signs((len + 7) / 8);
    is.read(reinterpret_cast<char*>(signs.data()), signs.size());
    if (!is) raise(Errc::format, "truncated group record");
    std::vector<uint8_t> neg(len);
    for (size_t i = 0; i < len; ++i) neg[i] = (signs[i / 8] >> (i % 8)) & 1;
    std::vector<uint16_t> mags(len);
    if (m <= 4) {
        std::vector<uint8_t> packed((len + 1) / 2);
        is.read(reinterpret_cast<char*>(packed.data()), packed.size());
        if (!is) raise(Errc::format, "truncated group record");
        for (size_t i = 0; i < len; ++i) {
            mags[i] = (i % 2 ? packed[i / 2] >> 4 : packed[i / 2]) & 0xF;
        }
    } else if (m <= 8) {
        for (size_t i = 0; i < len; ++i) mags[i] = get<uint8_t>(is);
    } else {
        for (size_t i = 0; i < len; ++i) mags[i] = get<uint16_t>(is);
    }
    return BfpGroup::from_parts(exp, m, mags, neg);
}

} // namespace

void BfpFileCodec::write(const std::filesystem::path& path, const BfpTensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(Errc::format, "cannot open " + path.string() + " for writing");
    put_magic(os, "HBFP");
    put<uint32_t>(os, kBfpVersion);
    put<uint32_t>(os, static_cast<uint32_t>(t.axis()));
    put<uint32_t>(os, static_cast<uint32_t>(t.config().group_size));
    put<uint32_t>(os, static_cast<uint32_t>(t.config().mantissa_bits));
    put<uint64_t>(os, t.tokens());
    put<uint64_t>(os, t.channels());
    put<uint32_t>(os, static_cast<uint32_t>(t.residual_len()));
    for (const BfpGroup& g : t.groups_) write_group(os, g);
    if (t.residual_len() > 0) {
        for (const BfpGroup& g : t.residual_) write_group(os, g);
    }
    if (!os) raise(Errc::format, "write failed: " + path.string());
}

BfpTensor BfpFileCodec::read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::format, "cannot open " + path.string());
    expect_magic(is, "HBFP", "bfp file");
    if (get<uint32_t>(is) != kBfpVersion) raise(Errc::format, "unsupported bfp file version");
    uint32_t axis_code = get<uint32_t>(is);
    if (axis_code > 1) raise(Errc::format, "bad axis code");
    BfpConfig cfg;
    cfg.group_size = get<uint32_t>(is);
    cfg.mantissa_bits = static_cast<int>(get<uint32_t>(is));
    cfg.validate();
    uint64_t tokens = get<uint64_t>(is);
    uint64_t channels = get<uint64_t>(is);
    uint32_t residual_len = get<uint32_t>(is);
    if (residual_len >= cfg.group_size)
        raise(Errc::format, "residual length must be below the group size");

    BfpTensor t;
    t.axis_ = static_cast<GroupingAxis>(axis_code);
    t.tokens_ = static_cast<size_t>(tokens);
    t.channels_ = static_cast<size_t>(channels);
    t.cfg_ = cfg;
    const size_t g = cfg.group_size;
    if (t.axis_ == GroupingAxis::per_token) {
        if (residual_len != 0) raise(Errc::format, "per_token tensors carry no residual");
        if (t.channels_ % g != 0) raise(Errc::format, "per_token channels not group aligned");
        t.rows_ = t.tokens_;
        t.cols_ = t.channels_ / g;
    } else {
        if (t.tokens_ % g != residual_len) raise(Errc::format, "residual length disagrees with shape");
        t.rows_ = t.tokens_ / g;
        t.cols_ = t.channels_;
        t.residual_len_ = residual_len;
    }
    size_t n_groups = t.rows_ * t.cols_;
    t.groups_.reserve(n_groups);
    for (size_t i = 0; i < n_groups; ++i) {
        t.groups_.push_back(read_group(is, cfg.mantissa_bits, g));
    }
    if (t.residual_len_ > 0) {
        t.residual_.reserve(t.channels_);
        for (size_t c = 0; c < t.channels_; ++c) {
            t.residual_.push_back(read_group(is, cfg.mantissa_bits, t.residual_len_));
        }
    }
    char extra;
    if (is.read(&extra, 1)) raise(Errc::format, "trailing bytes in bfp file");
    return t;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["hidden"] = cfg.hidden;
    j["heads"] = cfg.heads;
    j["head_dim"] = cfg.head_dim;
    j["ffn_dim"] = cfg.ffn_dim;
    j["prefill_tokens"] = cfg.prefill_tokens;
    j["decode_steps"] = cfg.decode_steps;
    j["group_size"] = cfg.bfp.group_size;
    j["mantissa_bits"] = cfg.bfp.mantissa_bits;
    j["kv"] = {{"initial_tokens", cfg.kv.initial_tokens},
               {"local_tokens", cfg.kv.local_tokens},
               {"m_high", cfg.kv.m_high},
               {"m_low", cfg.kv.m_low},
               {"count_shared_exponent", cfg.kv.count_shared_exponent}};
    j["smoothing"] = {{"offline", cfg.smoothing.offline},
                      {"online", cfg.smoothing.online},
                      {"top_k", cfg.smoothing.top_k},
                      {"calibration_iters", cfg.smoothing.calibration_iters},
                      {"calibration_samples", cfg.smoothing.calibration_samples},
                      {"allow_short_prefill", cfg.smoothing.allow_short_prefill}};
    if (!cfg.smoothing.scale.empty()) j["smoothing"]["scale"] = cfg.smoothing.scale;
    j["outliers"] = {{"channels", cfg.outliers.channels}, {"factor", cfg.outliers.factor}};
    j["input_bias"] = cfg.input_bias;
    j["seed"] = cfg.seed;
    j["tile_m"] = cfg.tile_m;
    j["tile_n"] = cfg.tile_n;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig cfg;
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.heads = j.value("heads", cfg.heads);
        cfg.head_dim = j.value("head_dim", cfg.hidden / cfg.heads);
        cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
        cfg.prefill_tokens = j.value("prefill_tokens", cfg.prefill_tokens);
        cfg.decode_steps = j.value("decode_steps", cfg.decode_steps);
        cfg.bfp.group_size = j.value("group_size", cfg.bfp.group_size);
        cfg.bfp.mantissa_bits = j.value("mantissa_bits", cfg.bfp.mantissa_bits);
        cfg.kv.group_size = cfg.bfp.group_size;
        if (j.contains("kv")) {
            const auto& k = j.at("kv");
            cfg.kv.initial_tokens = k.value("initial_tokens", cfg.kv.initial_tokens);
            cfg.kv.local_tokens = k.value("local_tokens", cfg.kv.local_tokens);
            cfg.kv.m_high = k.value("m_high", cfg.kv.m_high);
            cfg.kv.m_low = k.value("m_low", cfg.kv.m_low);
            cfg.kv.count_shared_exponent = k.value("count_shared_exponent", cfg.kv.count_shared_exponent);
        }
        if (j.contains("smoothing")) {
            const auto& s = j.at("smoothing");
            cfg.smoothing.offline = s.value("offline", cfg.smoothing.offline);
            cfg.smoothing.online = s.value("online", cfg.smoothing.online);
            cfg.smoothing.top_k = s.value("top_k", cfg.smoothing.top_k);
            cfg.smoothing.calibration_iters = s.value("calibration_iters", cfg.smoothing.calibration_iters);
            cfg.smoothing.calibration_samples =
                s.value("calibration_samples", cfg.smoothing.calibration_samples);
            cfg.smoothing.allow_short_prefill =
                s.value("allow_short_prefill", cfg.smoothing.allow_short_prefill);
            if (s.contains("scale")) cfg.smoothing.scale = s.at("scale").get<ScaleVector>();
        }
        if (j.contains("outliers")) {
            const auto& o = j.at("outliers");
            cfg.outliers.channels = o.value("channels", cfg.outliers.channels);
            cfg.outliers.factor = o.value("factor", cfg.outliers.factor);
        }
        cfg.input_bias = j.value("input_bias", cfg.input_bias);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.tile_m = j.value("tile_m", cfg.tile_m);
        cfg.tile_n = j.value("tile_n", cfg.tile_n);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::format, std::string("bad config: ") + e.what());
    }
}

namespace {

// layer aggregation across prefill + decode steps
nlohmann::json aggregate_layers(const RunSummary& run) {
    nlohmann::json per_layer = nlohmann::json::object();
    for (const LayerError& l : run.prefill.layers) {
        double mx = l.max_scaled;
        double mean_sum = l.mean_scaled;
        size_t steps = 1;
        for (const StepReport& s : run.decode) {
            mx = std::max(mx, s.layer_max(l.layer));
            mean_sum += s.layer_mean(l.layer);
            steps += 1;
        }
        per_layer[l.layer] = {{"max", mx}, {"mean", mean_sum / static_cast<double>(steps)}};
    }
    return per_layer;
}

} // namespace

nlohmann::json make_report(const ModelConfig& cfg, const RunSummary& run) {
    nlohmann::json j;
    j["config"] = model_config_to_json(cfg);
    j["storage_bits"] = run.final_storage.total_bits;
    j["compression_ratio"] = run.final_storage.compression_vs_fp16;

    double kl_mean = run.prefill.kl_mean, kl_max = run.prefill.kl_max;
    double row_dev = run.prefill.prob_row_sum_dev;
    size_t overflow = run.prefill.overflow_count;
    uint64_t ea = run.prefill.ema_elements_a, eb = run.prefill.ema_elements_b;
    double bits = run.prefill.ema_total_bits, energy = run.prefill.ema_energy_pj;
    for (const StepReport& s : run.decode) {
        kl_mean += s.kl_mean;
        kl_max = std::max(kl_max, s.kl_max);
        row_dev = std::max(row_dev, s.prob_row_sum_dev);
        overflow += s.overflow_count;
        ea += s.ema_elements_a;
        eb += s.ema_elements_b;
        bits += s.ema_total_bits;
        energy += s.ema_energy_pj;
    }
    kl_mean /= static_cast<double>(1 + run.decode.size());

    j["ema"] = {{"policy", run.prefill.ema_policy},
                {"elements_A", ea},
                {"elements_B", eb},
                {"total_bits", bits},
                {"energy_pJ", energy}};
    j["errors"] = {{"per_layer", aggregate_layers(run)},
                   {"kl_mean", kl_mean},
                   {"kl_max", kl_max},
                   {"prob_row_sum_dev", row_dev}};
    j["smoothing"] = {{"S", run.model.scale},
                      {"offsets", run.offsets.o},
                      {"active_channels",
                       std::vector<size_t>(run.offsets.active_channels.begin(),
                                           run.offsets.active_channels.end())}};
    j["flags"] = {{"overflow_count", overflow}};
    validate_report(j);
    return j;
}

void validate_report(const nlohmann::json& r) {
    auto need = [&](const char* key, nlohmann::json::value_t type) {
        if (!r.contains(key)) raise(Errc::format, std::string("report missing key: ") + key);
        if (r.at(key).type() != type &&
            !(type == nlohmann::json::value_t::number_float && r.at(key).is_number()))
            raise(Errc::format, std::string("report key has wrong type: ") + key);
    };
    need("config", nlohmann::json::value_t::object);
    need("storage_bits", nlohmann::json::value_t::number_float);
    need("compression_ratio", nlohmann::json::value_t::number_float);
    need("ema", nlohmann::json::value_t::object);
    need("errors", nlohmann::json::value_t::object);
    need("smoothing", nlohmann::json::value_t::object);
    need("flags", nlohmann::json::value_t::object);
    for (const char* k : {"policy", "elements_A", "elements_B", "total_bits", "energy_pJ"}) {
        if (!r.at("ema").contains(k)) raise(Errc::format, std::string("report ema missing: ") + k);
    }
    if (!r.at("errors").contains("per_layer")) raise(Errc::format, "report errors missing per_layer");
    for (const char* k : {"S", "offsets", "active_channels"}) {
        if (!r.at("smoothing").contains(k)) raise(Errc::format, std::string("report smoothing missing: ") + k);
    }
    if (!r.at("flags").contains("overflow_count")) raise(Errc::format, "report flags missing overflow_count");
}

void write_report(const std::filesystem::path& path, const nlohmann::json& report) {
    validate_report(report);
    std::ofstream os(path);
    if (!os) raise(Errc::format, "cannot open " + path.string() + " for writing");
    os << report.dump(2) << "\n";
}

namespace {
void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
        }
    } else if (j.is_array()) {
        out.push_back(prefix + "[]");
    } else {
        out.push_back(prefix);
    }
}
} // namespace

std::vector<std::string> report_key_paths(const nlohmann::json& report) {
    std::vector<std::string> out;
    flatten(report, "", out);
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace harmonia
