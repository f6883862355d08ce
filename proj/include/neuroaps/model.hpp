#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/autodiff.hpp"
#include "neuroaps/core_types.hpp"
#include "neuroaps/io.hpp"
#include "neuroaps/rng.hpp"

// The classification network: shared per-point MLP encoder, region-token max
// pooling with a learned empty-region token, single-query attention fusion of
// the region tokens with the global token, and a compact classifier head.

namespace neuroaps {

struct ModelConfig {
    int region_count = kRegionCount;
    std::array<int, 3> encoder_dims{64, 128, 256};
    int fusion_dim = 256;
    int head_hidden = 128;
    int n_classes = 2;
    std::uint64_t init_seed = 0;

    int input_dim() const { return 3 + region_count; }  // x, y, intensity, one-hot region
    int fused_dim() const { return 2 * fusion_dim; }    // attention output ++ global token

    void validate() const {
        if (region_count < 1) throw std::invalid_argument("model: region_count must be >= 1");
        for (int d : encoder_dims)
            if (d < 1) throw std::invalid_argument("model: encoder dims must be >= 1");
        if (fusion_dim != encoder_dims.back())
            throw std::invalid_argument("model: fusion_dim must equal the last encoder dim");
        if (head_hidden < 1 || n_classes < 2)
            throw std::invalid_argument("model: head dims out of range");
    }
};

template <typename T>
struct ModelParams;

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& config);

template <typename T>
struct ModelParams {
    ModelConfig config;

    std::array<ad::Tensor<T>, 3> enc_w;
    std::array<ad::Tensor<T>, 3> enc_b;
    ad::Tensor<T> wq, wk, wv;        // fusion_dim x fusion_dim projections
    ad::Tensor<T> empty_token;       // 1 x fusion_dim, used for point-free regions
    ad::Tensor<T> head_w1, head_b1;  // fused_dim x head_hidden
    ad::Tensor<T> head_w2, head_b2;  // head_hidden x n_classes

    /// Visits every parameter buffer in declaration order (the checkpoint and
    /// flattening order).
    template <typename F>
    void for_each_buffer(F&& f) {
        for (int l = 0; l < 3; ++l) {
            f(enc_w[l]);
            f(enc_b[l]);
        }
        f(wq);
        f(wk);
        f(wv);
        f(empty_token);
        f(head_w1);
        f(head_b1);
        f(head_w2);
        f(head_b2);
    }
    template <typename F>
    void for_each_buffer(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_buffer(
            [&](auto& t) { f(const_cast<const ad::Tensor<T>&>(t)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_buffer([&](const ad::Tensor<T>& t) { n += t.size(); });
        return n;
    }

    std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(parameter_count());
        for_each_buffer(
            [&](const ad::Tensor<T>& t) { out.insert(out.end(), t.data.begin(), t.data.end()); });
        return out;
    }

    void unflatten(std::span<const T> flat) {
        if (flat.size() != parameter_count())
            throw std::invalid_argument("unflatten: size mismatch");
        std::size_t off = 0;
        for_each_buffer([&](ad::Tensor<T>& t) {
            std::copy(flat.begin() + off, flat.begin() + off + t.size(), t.data.begin());
            off += t.size();
        });
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out = make_model_params<U>(config);
        std::vector<T> flat = flatten();
        std::vector<U> conv(flat.begin(), flat.end());
        out.unflatten(conv);
        return out;
    }
};

/// Allocates zero-initialized parameter buffers shaped per the config.
template <typename T>
ModelParams<T> make_model_params(const ModelConfig& config) {
    config.validate();
    ModelParams<T> p;
    p.config = config;
    int in = config.input_dim();
    for (int l = 0; l < 3; ++l) {
        p.enc_w[l] = ad::Tensor<T>(in, config.encoder_dims[l]);
        p.enc_b[l] = ad::Tensor<T>(1, config.encoder_dims[l]);
        in = config.encoder_dims[l];
    }
    const std::size_t d = static_cast<std::size_t>(config.fusion_dim);
    p.wq = ad::Tensor<T>(d, d);
    p.wk = ad::Tensor<T>(d, d);
    p.wv = ad::Tensor<T>(d, d);
    p.empty_token = ad::Tensor<T>(1, d);
    p.head_w1 = ad::Tensor<T>(config.fused_dim(), config.head_hidden);
    p.head_b1 = ad::Tensor<T>(1, config.head_hidden);
    p.head_w2 = ad::Tensor<T>(config.head_hidden, config.n_classes);
    p.head_b2 = ad::Tensor<T>(1, config.n_classes);
    return p;
}

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases, zero
/// empty-region token. Deterministic per config.init_seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config) {
    ModelParams<T> p = make_model_params<T>(config);
    Rng rng(derive_seed(config.init_seed, tag_hash("model-init")));
    p.for_each_buffer([&](ad::Tensor<T>& t) {
        if (t.rows == 1) return;  // biases and the empty token stay zero
        const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
        for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    });
    return p;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

template <typename T>
struct ParamNodes {
    std::array<int, 3> enc_w, enc_b;
    int wq, wk, wv;
    int empty_token;
    int head_w1, head_b1, head_w2, head_b2;
};

template <typename T>
ParamNodes<T> register_params(ad::Tape<T>& tape, const ModelParams<T>& p) {
    ParamNodes<T> n{};
    for (int l = 0; l < 3; ++l) {
        n.enc_w[l] = tape.leaf(p.enc_w[l], true);
        n.enc_b[l] = tape.leaf(p.enc_b[l], true);
    }
    n.wq = tape.leaf(p.wq, true);
    n.wk = tape.leaf(p.wk, true);
    n.wv = tape.leaf(p.wv, true);
    n.empty_token = tape.leaf(p.empty_token, true);
    n.head_w1 = tape.leaf(p.head_w1, true);
    n.head_b1 = tape.leaf(p.head_b1, true);
    n.head_w2 = tape.leaf(p.head_w2, true);
    n.head_b2 = tape.leaf(p.head_b2, true);
    return n;
}

/// Packs B same-size clouds into one [B*N x input_dim] matrix of
/// (x, y, intensity, one-hot region) rows plus the per-point group ids used
/// by the pooling stages.
template <typename T>
struct BatchInput {
    ad::Tensor<T> points;          // B*N x input_dim
    std::vector<int> region_ids;   // b * region_count + region
    std::vector<int> cloud_ids;    // b
    std::size_t batch = 0;
    std::size_t points_per_cloud = 0;
};

template <typename T>
BatchInput<T> pack_clouds(std::span<const PointCloud> clouds, const ModelConfig& config) {
    if (clouds.empty()) throw std::invalid_argument("pack_clouds: empty batch");
    const std::size_t n = clouds[0].points.size();
    if (n == 0) throw std::invalid_argument("pack_clouds: clouds must be non-empty");
    for (const auto& c : clouds)
        if (c.points.size() != n)
            throw std::invalid_argument("pack_clouds: clouds in a batch must share a size");

    BatchInput<T> in;
    in.batch = clouds.size();
    in.points_per_cloud = n;
    in.points = ad::Tensor<T>(clouds.size() * n, config.input_dim());
    in.region_ids.reserve(clouds.size() * n);
    in.cloud_ids.reserve(clouds.size() * n);
    std::size_t row = 0;
    for (std::size_t b = 0; b < clouds.size(); ++b) {
        for (const LabeledPoint& p : clouds[b].points) {
            T* r = in.points.row(row++);
            r[0] = static_cast<T>(p.x);
            r[1] = static_cast<T>(p.y);
            r[2] = static_cast<T>(p.intensity);
            r[3 + static_cast<int>(p.region)] = T{1};
            in.region_ids.push_back(static_cast<int>(b) * config.region_count +
                                    static_cast<int>(p.region));
            in.cloud_ids.push_back(static_cast<int>(b));
        }
    }
    return in;
}

template <typename T>
struct ForwardResult {
    int logits;                          // B x n_classes
    std::vector<int> attention_weights;  // per cloud, each [1 x region_count]
    std::vector<std::uint8_t> empty_regions;  // B * region_count flags
    ParamNodes<T> param_nodes;
};

/// Visits the parameter node ids in the same order as
/// ModelParams::for_each_buffer.
template <typename T, typename F>
void for_each_param_node(const ParamNodes<T>& pn, F&& f) {
    for (int l = 0; l < 3; ++l) {
        f(pn.enc_w[l]);
        f(pn.enc_b[l]);
    }
    f(pn.wq);
    f(pn.wk);
    f(pn.wv);
    f(pn.empty_token);
    f(pn.head_w1);
    f(pn.head_b1);
    f(pn.head_w2);
    f(pn.head_b2);
}

/// Gathers parameter gradients off the tape into a flat vector laid out like
/// ModelParams::flatten. Parameters backward never touched contribute zeros.
template <typename T>
void collect_param_grads(const ad::Tape<T>& tape, const ForwardResult<T>& fwd,
                         std::vector<T>& out) {
    std::size_t off = 0;
    for_each_param_node(fwd.param_nodes, [&](int id) {
        const ad::Tensor<T>& value = tape.value(id);
        const ad::Tensor<T>* g = tape.grad(id);
        if (off + value.size() > out.size())
            throw std::invalid_argument("collect_param_grads: output buffer too small");
        if (g)
            std::copy(g->data.begin(), g->data.end(), out.begin() + off);
        else
            std::fill(out.begin() + off, out.begin() + off + value.size(), T{});
        off += value.size();
    });
    if (off != out.size())
        throw std::invalid_argument("collect_param_grads: output buffer size mismatch");
}

/// Shared per-point MLP: Linear-ReLU x3 applied to every packed point row.
template <typename T>
int encode_points(ad::Tape<T>& tape, const ParamNodes<T>& pn, int input) {
    int h = input;
    for (int l = 0; l < 3; ++l)
        h = tape.relu(tape.add_bias(tape.matmul(h, pn.enc_w[l]), pn.enc_b[l]));
    return h;
}

template <typename T>
struct TokenizeResult {
    int roi_tokens;  // (B * region_count) x D, empty rows already replaced
    int global;      // B x D
    std::vector<std::uint8_t> empty;
};

/// Region tokens via per-region masked max pooling (empty regions take the
/// learned token) and the global token via an all-points max pool.
template <typename T>
TokenizeResult<T> roi_tokenize(ad::Tape<T>& tape, const ParamNodes<T>& pn, int features,
                               const BatchInput<T>& in, const ModelConfig& config) {
    auto regions = tape.masked_max_pool(
        features, in.region_ids, static_cast<int>(in.batch) * config.region_count);
    auto global = tape.masked_max_pool(features, in.cloud_ids, static_cast<int>(in.batch));
    const int tokens = tape.replace_empty_rows(regions.node, regions.empty, pn.empty_token);
    return {tokens, global.node, std::move(regions.empty)};
}

/// Attention of the projected global token over the projected region tokens,
/// concatenated with the global token itself.
template <typename T>
std::pair<int, std::vector<int>> fuse(ad::Tape<T>& tape, const ParamNodes<T>& pn,
                                      const TokenizeResult<T>& tok, const BatchInput<T>& in,
                                      const ModelConfig& config) {
    const int G = config.region_count;
    const int Q = tape.matmul(tok.global, pn.wq);
    const int K = tape.matmul(tok.roi_tokens, pn.wk);
    const int V = tape.matmul(tok.roi_tokens, pn.wv);
    std::vector<int> fused_rows;
    std::vector<int> weights;
    fused_rows.reserve(in.batch);
    weights.reserve(in.batch);
    for (std::size_t b = 0; b < in.batch; ++b) {
        const int qb = tape.slice_rows(Q, b, 1);
        const int kb = tape.slice_rows(K, b * G, G);
        const int vb = tape.slice_rows(V, b * G, G);
        const auto attn = ad::scaled_dot_attention(tape, qb, kb, vb);
        const int gb = tape.slice_rows(tok.global, b, 1);
        fused_rows.push_back(tape.concat_cols(attn.output, gb));
        weights.push_back(attn.weights);
    }
    return {tape.stack_rows(fused_rows), std::move(weights)};
}

template <typename T>
ForwardResult<T> forward_batch(ad::Tape<T>& tape, const ModelParams<T>& params,
                               std::span<const PointCloud> clouds) {
    const ModelConfig& config = params.config;
    const ParamNodes<T> pn = register_params(tape, params);
    BatchInput<T> in = pack_clouds<T>(clouds, config);
    const int input = tape.leaf(std::move(in.points), false);
    const int features = encode_points(tape, pn, input);
    TokenizeResult<T> tok = roi_tokenize(tape, pn, features, in, config);
    auto [fused, attn_weights] = fuse(tape, pn, tok, in, config);
    const int hidden = tape.relu(tape.add_bias(tape.matmul(fused, pn.head_w1), pn.head_b1));
    const int logits = tape.add_bias(tape.matmul(hidden, pn.head_w2), pn.head_b2);
    return {logits, std::move(attn_weights), std::move(tok.empty)};
}

template <typename T>
ForwardResult<T> forward(ad::Tape<T>& tape, const ModelParams<T>& params,
                         const PointCloud& cloud) {
    return forward_batch(tape, params, std::span<const PointCloud>(&cloud, 1));
}

/// Logits for one cloud on a throwaway tape.
template <typename T>
ad::Tensor<T> logits_of(const ModelParams<T>& params, const PointCloud& cloud) {
    ad::Tape<T> tape;
    const auto res = forward(tape, params, cloud);
    return tape.value(res.logits);
}

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params) {
    return params.parameter_count();
}

/// Analytic flop count of the point-dependent stages (encoder + both pooling
/// passes); exactly linear in the point count.
inline std::uint64_t encoder_pooling_flops(const ModelConfig& config, std::uint64_t n_points) {
    std::uint64_t per_point = 0;
    std::uint64_t in = static_cast<std::uint64_t>(config.input_dim());
    for (int l = 0; l < 3; ++l) {
        const std::uint64_t out = static_cast<std::uint64_t>(config.encoder_dims[l]);
        per_point += 2 * in * out + 2 * out;  // matmul + bias + relu
        in = out;
    }
    per_point += 2 * static_cast<std::uint64_t>(config.fusion_dim);  // region + global max pools
    return per_point * n_points;
}

// ---------------------------------------------------------------------------
// Checkpoint format "NAPS"
//
//   magic "NAPS" | u32 version=1 | u32 region_count | 3 x u32 encoder dims |
//   u32 fusion_dim | u32 head_hidden | u32 n_classes | u64 init_seed |
//   raw little-endian f32 parameter buffers in declaration order
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'N', 'A', 'P', 'S'});
    io::put_u32le(out, 1);
    io::put_u32le(out, static_cast<std::uint32_t>(params.config.region_count));
    for (int d : params.config.encoder_dims) io::put_u32le(out, static_cast<std::uint32_t>(d));
    io::put_u32le(out, static_cast<std::uint32_t>(params.config.fusion_dim));
    io::put_u32le(out, static_cast<std::uint32_t>(params.config.head_hidden));
    io::put_u32le(out, static_cast<std::uint32_t>(params.config.n_classes));
    io::put_u64le(out, params.config.init_seed);
    params.for_each_buffer([&](const ad::Tensor<float>& t) {
        for (float v : t.data) io::put_f32le(out, v);
    });
    io::write_file_atomic(path, out);
}

inline ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    constexpr std::size_t kHeader = 4 + 4 + 4 + 12 + 4 + 4 + 4 + 8;
    if (bytes.size() < kHeader) throw io::LengthError("checkpoint: shorter than header");
    if (std::memcmp(bytes.data(), "NAPS", 4) != 0)
        throw io::FormatError("checkpoint: bad magic, expected NAPS");
    if (io::get_u32le(bytes, 4) != 1) throw io::FormatError("checkpoint: unsupported version");

    ModelConfig config;
    config.region_count = static_cast<int>(io::get_u32le(bytes, 8));
    for (int l = 0; l < 3; ++l)
        config.encoder_dims[l] = static_cast<int>(io::get_u32le(bytes, 12 + 4 * l));
    config.fusion_dim = static_cast<int>(io::get_u32le(bytes, 24));
    config.head_hidden = static_cast<int>(io::get_u32le(bytes, 28));
    config.n_classes = static_cast<int>(io::get_u32le(bytes, 32));
    config.init_seed = io::get_u64le(bytes, 36);
    config.validate();

    ModelParams<float> params = make_model_params<float>(config);
    const std::size_t expected = kHeader + 4 * params.parameter_count();
    if (bytes.size() != expected)
        throw io::LengthError("checkpoint: expected " + std::to_string(expected) +
                              " bytes, got " + std::to_string(bytes.size()));
    std::size_t off = kHeader;
    params.for_each_buffer([&](ad::Tensor<float>& t) {
        for (float& v : t.data) {
            v = io::get_f32le(bytes, off);
            off += 4;
            if (!std::isfinite(v)) throw io::ValueError("checkpoint: non-finite parameter");
        }
    });
    return params;
}

}  // namespace neuroaps
