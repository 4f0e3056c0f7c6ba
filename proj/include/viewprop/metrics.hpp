// viewprop/metrics.hpp
//
// Evaluation: embedding-space direction agreement, adjacent-view
// consistency, and correspondence-level photometric inconsistency.
// Degenerate inputs (zero difference vectors, no valid correspondences)
// raise MetricError; they are never reported as zeros.
//
// The built-in embedding provider is deliberately simple and fully
// deterministic: images embed as an 8x8 mean-pooled grayscale thumbnail
// (64 dims); text embeds as a hash-seeded vector, semantically meaningless
// but stable, which keeps caption-direction plumbing testable offline.
#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "viewprop/core.hpp"
#include "viewprop/geometry.hpp"
#include "viewprop/image.hpp"
#include "viewprop/png_io.hpp"
#include "viewprop/scene.hpp"
#include "viewprop/subprocess.hpp"

namespace viewprop {

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Eigen::VectorXd image_embed(const ImageBuffer& image) = 0;
    virtual Eigen::VectorXd text_embed(const std::string& text) = 0;
};

namespace detail {

// Embeddings are unit length so cosine scores are scale-free; an all-zero
// embedding stays zero so degenerate inputs remain detectable downstream.
inline Eigen::VectorXd l2_normalize(Eigen::VectorXd v) {
    double n = v.norm();
    if (n > 1e-12)
        v /= n;
    else
        v.setZero();
    return v;
}

}  // namespace detail

class BuiltinEmbeddingProvider : public EmbeddingProvider {
public:
    static constexpr int kGrid = 8;
    static constexpr int kDim = kGrid * kGrid;

    Eigen::VectorXd image_embed(const ImageBuffer& image) override {
        if (image.width < kGrid || image.height < kGrid)
            throw MetricError("image too small to embed (needs at least 8x8)");
        Eigen::VectorXd out(kDim);
        for (int gy = 0; gy < kGrid; ++gy) {
            int y0 = gy * image.height / kGrid;
            int y1 = (gy + 1) * image.height / kGrid;
            for (int gx = 0; gx < kGrid; ++gx) {
                int x0 = gx * image.width / kGrid;
                int x1 = (gx + 1) * image.width / kGrid;
                double sum = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) {
                        Eigen::Vector3d c = image.rgb(x, y);
                        sum += 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z();
                    }
                out[gy * kGrid + gx] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
        return detail::l2_normalize(std::move(out));
    }

    Eigen::VectorXd text_embed(const std::string& text) override {
        Eigen::VectorXd out(kDim);
        std::uint64_t base = fnv1a64(text);
        for (int k = 0; k < kDim; ++k)
            out[k] = 2.0 * uniform01(derive_seed(base, "text_embed", static_cast<std::uint64_t>(k))) - 1.0;
        return detail::l2_normalize(std::move(out));
    }
};

// External provider protocol, one fresh work dir per call:
//   <dir>/embed_request.json  {"kind": "image"|"text", "image": "input.png"
//                              or "text": "..."}
//   <dir>/input.png           present for image requests
// The command runs with <dir> as its single argument and must write
// <dir>/embedding.bin: little-endian float32, any fixed dimension.
class ExternalEmbeddingProvider : public EmbeddingProvider {
public:
    ExternalEmbeddingProvider(std::string command, std::filesystem::path work_root,
                              double timeout_sec = 300.0)
        : command_(std::move(command)), work_root_(std::move(work_root)), timeout_(timeout_sec) {
        if (command_.empty()) throw std::invalid_argument("embedding provider: empty command");
    }

    Eigen::VectorXd image_embed(const ImageBuffer& image) override {
        nlohmann::ordered_json req;
        req["kind"] = "image";
        req["image"] = "input.png";
        return invoke(req, &image);
    }

    Eigen::VectorXd text_embed(const std::string& text) override {
        nlohmann::ordered_json req;
        req["kind"] = "text";
        req["text"] = text;
        return invoke(req, nullptr);
    }

private:
    Eigen::VectorXd invoke(const nlohmann::ordered_json& request, const ImageBuffer* image) {
        char dirname[32];
        std::snprintf(dirname, sizeof(dirname), "embed_%06llu",
                      static_cast<unsigned long long>(counter_++));
        std::filesystem::path dir = work_root_ / dirname;
        std::filesystem::create_directories(dir);
        if (image) write_png_rgb8(dir / "input.png", *image);
        {
            std::ofstream out(dir / "embed_request.json", std::ios::binary);
            if (!out) throw MetricError("cannot write embed request: " + dir.string());
            out << request.dump(2) << "\n";
        }
        std::filesystem::path log = dir / "embed_log.txt";
        std::string cmd = command_ + " " + shell_quote(dir.string()) + " > " +
                          shell_quote(log.string()) + " 2>&1";
        CommandResult run = run_command(cmd, timeout_);
        if (run.timed_out)
            throw MetricError("embedding provider timed out in " + dir.string());
        if (run.exit_code != 0)
            throw MetricError("embedding provider exited with code " +
                              std::to_string(run.exit_code) + " in " + dir.string());

        std::ifstream in(dir / "embedding.bin", std::ios::binary);
        if (!in) throw MetricError("embedding provider produced no embedding.bin in " + dir.string());
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        if (bytes.empty() || bytes.size() % 4 != 0)
            throw MetricError("embedding.bin is not a float32 array in " + dir.string());
        std::size_t dim = bytes.size() / 4;
        if (expected_dim_ == 0)
            expected_dim_ = dim;
        else if (dim != expected_dim_)
            throw MetricError("embedding dimension changed between calls");
        Eigen::VectorXd out(static_cast<Eigen::Index>(dim));
        for (std::size_t k = 0; k < dim; ++k) {
            float v = 0;
            std::memcpy(&v, bytes.data() + 4 * k, 4);
            out[static_cast<Eigen::Index>(k)] = static_cast<double>(v);
        }
        return detail::l2_normalize(std::move(out));
    }

    std::string command_;
    std::filesystem::path work_root_;
    double timeout_;
    std::uint64_t counter_ = 0;
    std::size_t expected_dim_ = 0;
};

// ── scores ──────────────────────────────────────────────────────────────

namespace detail {

inline double cosine_or_throw(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                              const char* what) {
    double na = a.norm();
    double nb = b.norm();
    if (na < 1e-12 || nb < 1e-12)
        throw MetricError(std::string("degenerate direction in ") + what);
    return a.dot(b) / (na * nb);
}

}  // namespace detail

// Mean cosine between per-view image-embedding shifts and the caption
// embedding shift. All views share the caption pair.
inline double direction_score(const std::vector<ImageBuffer>& originals,
                              const std::vector<ImageBuffer>& edits,
                              const std::string& original_caption,
                              const std::string& edited_caption, EmbeddingProvider& provider) {
    if (originals.empty() || originals.size() != edits.size())
        throw std::invalid_argument("direction_score: need matching non-empty image lists");
    Eigen::VectorXd dt = provider.text_embed(edited_caption) - provider.text_embed(original_caption);
    double sum = 0.0;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        Eigen::VectorXd di = provider.image_embed(edits[i]) - provider.image_embed(originals[i]);
        sum += detail::cosine_or_throw(di, dt, "direction_score");
    }
    return sum / static_cast<double>(originals.size());
}

// Mean cosine between adjacent-view embedding differences of the edited
// images and of the originals. Adjacency is dataset order, non-cyclic.
inline double consistency_score(const std::vector<ImageBuffer>& originals,
                                const std::vector<ImageBuffer>& edits,
                                EmbeddingProvider& provider) {
    if (originals.size() != edits.size())
        throw std::invalid_argument("consistency_score: image list sizes differ");
    if (originals.size() < 2)
        throw std::invalid_argument("consistency_score: needs at least two views");
    std::vector<Eigen::VectorXd> eo, ee;
    for (std::size_t i = 0; i < originals.size(); ++i) {
        eo.push_back(provider.image_embed(originals[i]));
        ee.push_back(provider.image_embed(edits[i]));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < originals.size(); ++i) {
        Eigen::VectorXd d_edit = ee[i + 1] - ee[i];
        Eigen::VectorXd d_orig = eo[i + 1] - eo[i];
        sum += detail::cosine_or_throw(d_edit, d_orig, "consistency_score");
    }
    return sum / static_cast<double>(originals.size() - 1);
}

// Mean absolute per-channel difference across valid correspondences of
// adjacent view pairs, both directions per pair (symmetric by
// construction). Views carry the edited images plus original geometry.
inline double photometric_inconsistency(const std::vector<ViewRecord>& views,
                                        const FilterPolicy& policy = {}) {
    if (views.size() < 2)
        throw std::invalid_argument("photometric_inconsistency: needs at least two views");
    double sum = 0.0;
    std::size_t samples = 0;
    for (std::size_t i = 0; i + 1 < views.size(); ++i) {
        const ViewRecord* pair[2][2] = {{&views[i], &views[i + 1]}, {&views[i + 1], &views[i]}};
        for (auto& [tgt, src] : pair) {
            CorrespondenceMap corr = build_correspondences(*tgt, *src, policy);
            for (int y = 0; y < corr.height; ++y)
                for (int x = 0; x < corr.width; ++x) {
                    const CorrEntry& e = corr.entries[corr.index(x, y)];
                    if (!e.valid) continue;
                    Eigen::Vector3d a = tgt->image.rgb(x, y);
                    Eigen::Vector3d b = bilinear_sample(src->image, e.u, e.v);
                    sum += (a - b).cwiseAbs().sum();
                    samples += 3;
                }
        }
    }
    if (samples == 0)
        throw MetricError("photometric_inconsistency: no valid correspondences");
    return sum / static_cast<double>(samples);
}

// ── report ──────────────────────────────────────────────────────────────

struct StageCount {
    std::uint64_t logical = 0;
    std::uint64_t subruns = 0;
};

struct MetricReport {
    std::optional<double> direction;
    std::optional<double> consistency;
    std::optional<double> photometric;
    std::map<std::string, std::string> errors;  // metric name -> failure reason
    std::map<std::string, StageCount> invocations;
    std::uint64_t total_logical = 0;

    bool has_errors() const { return !errors.empty(); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["direction_score"] = direction ? nlohmann::json(*direction) : nlohmann::json(nullptr);
        j["consistency_score"] =
            consistency ? nlohmann::json(*consistency) : nlohmann::json(nullptr);
        j["photometric_inconsistency"] =
            photometric ? nlohmann::json(*photometric) : nlohmann::json(nullptr);
        auto errs = nlohmann::ordered_json::object();
        for (const auto& [k, v] : errors) errs[k] = v;
        j["errors"] = errs;
        auto inv = nlohmann::ordered_json::object();
        for (const auto& [name, c] : invocations) {
            inv[name] = {{"logical", c.logical}, {"subruns", c.subruns}};
        }
        j["invocations"] = inv;
        j["total_logical_invocations"] = total_logical;
        return j;
    }
};

struct ReportOptions {
    bool enable_scores = true;
    std::string original_caption = "a photo of a scene";
    std::string edited_caption = "an edited photo of a scene";
};

// Builds the metric report. Score failures land in `errors` so invocation
// accounting survives degenerate data; callers decide whether that is
// fatal (the metrics CLI treats it as exit 2).
inline MetricReport report(const std::vector<ViewRecord>& original_views,
                           const std::vector<ViewRecord>& edited_views,
                           EmbeddingProvider& provider, const ReportOptions& options,
                           const std::map<std::string, StageCount>& invocations,
                           const FilterPolicy& policy = {}) {
    MetricReport rep;
    rep.invocations = invocations;
    for (const auto& [name, c] : invocations) rep.total_logical += c.logical;
    if (!options.enable_scores) return rep;

    std::vector<ImageBuffer> originals, edits;
    for (const auto& v : original_views) originals.push_back(v.image);
    for (const auto& v : edited_views) edits.push_back(v.image);

    try {
        rep.direction = direction_score(originals, edits, options.original_caption,
                                        options.edited_caption, provider);
    } catch (const Error& e) {
        rep.errors["direction_score"] = e.what();
    }
    try {
        rep.consistency = consistency_score(originals, edits, provider);
    } catch (const Error& e) {
        rep.errors["consistency_score"] = e.what();
    }
    try {
        rep.photometric = photometric_inconsistency(edited_views, policy);
    } catch (const Error& e) {
        rep.errors["photometric_inconsistency"] = e.what();
    }
    return rep;
}

}  // namespace viewprop
