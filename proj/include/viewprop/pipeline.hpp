// viewprop/pipeline.hpp
//
// End-to-end propagation run:
//   warm-up -> key-view loop (edit + write-once mixup) -> two-pass blend
//   -> optional post-refinement -> dataset/ledger/metric outputs.
//
// All randomness is derived from the propagation seed with stage tags, so
// a run is a pure function of (input dataset, config). Checkpoints exploit
// that: resuming replays nothing that was already checkpointed and lands
// bit-identical to an uninterrupted run.
//
// Invocation ledger stages: "warmup", "key_edit", "blend", "post_refine".
// It counts what contributed to the final output; work discarded by an
// interrupted, never-checkpointed step is not counted twice because the
// editor counters are restored from the checkpoint.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "viewprop/core.hpp"
#include "viewprop/editing.hpp"
#include "viewprop/geometry.hpp"
#include "viewprop/metrics.hpp"
#include "viewprop/propagation.hpp"
#include "viewprop/scene.hpp"

namespace viewprop {

// Post-refinement feeds the blended image back through the editor
// conditioned on the projection mixup; the ledger records the choice.
inline constexpr const char* kPostRefineInput = "blended-standin";

struct RunConfig {
    PropagationConfig propagation;
    FilterPolicy filter;
    EditorConfig editor;    // blend / post-refinement parameters + instruction
    KeyEditParams key_edit; // warm-up and key-view edit parameters
    std::string editor_spec = "mock:identity";
    bool post_refine = true;
    bool metrics_enabled = false;
    std::string original_caption;  // empty: generic default
    std::string edited_caption;    // empty: falls back to the instruction
    int worker_count = 1;
    double editor_timeout = 300.0;
    bool emit_timings = false;

    void validate() const {
        propagation.validate();
        filter.validate();
        editor.validate();
        key_edit.validate();
        if (worker_count < 1) throw std::invalid_argument("run: worker_count must be >= 1");
        if (!(editor_timeout > 0.0))
            throw std::invalid_argument("run: editor_timeout must be positive");
    }
};

struct RunLedger {
    std::map<std::string, StageCount> stages;
    std::vector<int> key_view_trace;               // view ids, selection order
    std::vector<std::vector<double>> rho_history;  // snapshot after each key iteration
    std::map<std::string, double> timings;         // seconds, informational only
    bool post_refined = false;

    std::uint64_t total_logical() const {
        std::uint64_t sum = 0;
        for (const auto& [name, c] : stages) sum += c.logical;
        return sum;
    }

    nlohmann::ordered_json to_json(bool include_timings) const {
        nlohmann::ordered_json j;
        auto st = nlohmann::ordered_json::object();
        for (const auto& [name, c] : stages)
            st[name] = {{"logical", c.logical}, {"subruns", c.subruns}};
        j["stages"] = st;
        j["total_logical_invocations"] = total_logical();
        j["key_view_trace"] = key_view_trace;
        j["rho_history"] = rho_history;
        if (post_refined) j["post_refine_input"] = kPostRefineInput;
        if (include_timings) {
            auto tm = nlohmann::ordered_json::object();
            for (const auto& [name, sec] : timings) tm[name] = sec;
            j["timings_sec"] = tm;
        }
        return j;
    }

    static RunLedger from_json(const nlohmann::json& j) {
        RunLedger lg;
        for (const auto& [name, c] : j.at("stages").items()) {
            StageCount sc;
            sc.logical = c.at("logical").get<std::uint64_t>();
            sc.subruns = c.at("subruns").get<std::uint64_t>();
            lg.stages[name] = sc;
        }
        lg.key_view_trace = j.at("key_view_trace").get<std::vector<int>>();
        lg.rho_history = j.at("rho_history").get<std::vector<std::vector<double>>>();
        lg.post_refined = j.contains("post_refine_input");
        return lg;
    }
};

// Hooks for invariant checking from tests. When before/after mixup hooks
// are present the mixup fan-out runs serially so snapshots interleave
// deterministically with writes.
struct RunObservers {
    std::function<void(const std::vector<ViewRecord>&, int target, int source)> before_mixup;
    std::function<void(const std::vector<ViewRecord>&, int target, int source)> after_mixup;
    std::function<void(const std::vector<ViewRecord>&, const PropagationState&)>
        after_key_iteration;
};

enum class PipelineStage { Warmup, KeyLoop, Blend, PostRefine, Done };

inline const char* stage_name(PipelineStage s) {
    switch (s) {
        case PipelineStage::Warmup: return "warmup";
        case PipelineStage::KeyLoop: return "key_loop";
        case PipelineStage::Blend: return "blend";
        case PipelineStage::PostRefine: return "post_refine";
        case PipelineStage::Done: return "done";
    }
    throw std::invalid_argument("stage_name: unhandled stage");
}

inline PipelineStage stage_from_name(const std::string& name) {
    if (name == "warmup") return PipelineStage::Warmup;
    if (name == "key_loop") return PipelineStage::KeyLoop;
    if (name == "blend") return PipelineStage::Blend;
    if (name == "post_refine") return PipelineStage::PostRefine;
    if (name == "done") return PipelineStage::Done;
    throw IoError("checkpoint names unknown stage: " + name);
}

namespace detail {

// Raw float64 image dump: int32 width, int32 height, then width*height*3
// native-endian doubles. Lossless, so resume is bit-exact.
inline void write_raw_image(const std::filesystem::path& path, const ImageBuffer& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint image: " + path.string());
    std::int32_t wh[2] = {img.width, img.height};
    out.write(reinterpret_cast<const char*>(wh), sizeof wh);
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    if (!out) throw IoError("short write on checkpoint image: " + path.string());
}

inline ImageBuffer read_raw_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint image: " + path.string());
    std::int32_t wh[2] = {0, 0};
    in.read(reinterpret_cast<char*>(wh), sizeof wh);
    if (!in || wh[0] <= 0 || wh[1] <= 0)
        throw IoError("corrupt checkpoint image header: " + path.string());
    ImageBuffer img(wh[0], wh[1]);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    if (!in) throw IoError("corrupt checkpoint image payload: " + path.string());
    return img;
}

// Fields that change the computation. Resuming under a different value of
// any of these cannot be bit-exact, so it is refused.
inline nlohmann::ordered_json config_fingerprint(const RunConfig& c,
                                                 const std::vector<ViewRecord>& views) {
    nlohmann::ordered_json j;
    j["seed"] = c.propagation.seed;
    j["phi"] = c.propagation.phi;
    j["stop_ratio"] = c.propagation.stop_ratio;
    j["lambda"] = c.propagation.lambda;
    j["warmup_iterations"] = c.propagation.warmup_iterations;
    j["filter"] = {{"max_reprojection_error", c.filter.max_reprojection_error},
                   {"depth_agreement_tolerance", c.filter.depth_agreement_tolerance},
                   {"require_in_frustum", c.filter.require_in_frustum},
                   {"depth_discontinuity_tolerance", c.filter.depth_discontinuity_tolerance}};
    j["editor"] = {{"instruction", c.editor.instruction},
                   {"timestep_t", c.editor.timestep_t},
                   {"diffusion_steps", c.editor.diffusion_steps},
                   {"S_I", c.editor.image_guidance},
                   {"S_T", c.editor.text_guidance},
                   {"n_r", c.editor.n_r}};
    j["key_edit"] = {{"t_min", c.key_edit.t_min},
                     {"t_max", c.key_edit.t_max},
                     {"diffusion_steps", c.key_edit.diffusion_steps}};
    j["editor_spec"] = c.editor_spec;
    j["post_refine"] = c.post_refine;
    auto vs = nlohmann::ordered_json::array();
    for (const auto& v : views)
        vs.push_back({{"id", v.id}, {"w", v.intrinsics.width}, {"h", v.intrinsics.height}});
    j["views"] = vs;
    return j;
}

struct CheckpointState {
    PipelineStage stage = PipelineStage::Warmup;
    int warmup_done = 0;
    int blend_done = 0;
    int post_done = 0;
    std::vector<int> key_views;  // indices into the view array
    bool finished = false;
    std::uint64_t editor_logical = 0;
    std::uint64_t editor_subruns = 0;
};

// Checkpoint directory layout:
//   state.json            position, counters, ledger, file name tables
//   img_<id>_g<gen>.bin   current image of each view (raw float64)
//   mask_<id>_g<gen>.png  write-once mask of each view
//   mix_<id>_g<gen>.bin   pre-blend snapshot, present from blend stage on
// Files are generation-suffixed and state.json is published by rename, so
// an interrupted save never corrupts the previous checkpoint. Files no
// longer referenced are removed after each successful publish.
class Checkpointer {
public:
    explicit Checkpointer(std::filesystem::path dir) : dir_(std::move(dir)) {}

    bool enabled() const { return !dir_.empty(); }
    bool exists() const { return enabled() && std::filesystem::exists(dir_ / "state.json"); }
    const std::filesystem::path& dir() const { return dir_; }

    void save(const std::vector<ViewRecord>& views, const std::vector<ImageBuffer>& mixups,
              const CheckpointState& cs, const RunLedger& ledger,
              const nlohmann::ordered_json& fingerprint, const std::vector<int>& changed_images,
              const std::vector<int>& changed_masks, bool write_mixups) {
        if (!enabled()) return;
        std::filesystem::create_directories(dir_);
        ++generation_;
        img_names_.resize(views.size());
        mask_names_.resize(views.size());

        for (int i : changed_images) {
            std::string name = file_name("img", views[static_cast<std::size_t>(i)].id, ".bin");
            write_raw_image(dir_ / name, views[static_cast<std::size_t>(i)].image);
            img_names_[static_cast<std::size_t>(i)] = name;
        }
        for (int i : changed_masks) {
            std::string name = file_name("mask", views[static_cast<std::size_t>(i)].id, ".png");
            write_png_mask(dir_ / name, views[static_cast<std::size_t>(i)].modified);
            mask_names_[static_cast<std::size_t>(i)] = name;
        }
        if (write_mixups) {
            mix_names_.resize(views.size());
            for (std::size_t i = 0; i < mixups.size(); ++i) {
                std::string name = file_name("mix", views[i].id, ".bin");
                write_raw_image(dir_ / name, mixups[i]);
                mix_names_[i] = name;
            }
        }

        nlohmann::ordered_json j;
        j["version"] = "viewprop-ckpt-1";
        j["generation"] = generation_;
        j["stage"] = stage_name(cs.stage);
        j["warmup_done"] = cs.warmup_done;
        j["blend_done"] = cs.blend_done;
        j["post_done"] = cs.post_done;
        j["key_views"] = cs.key_views;
        j["finished"] = cs.finished;
        j["editor_logical"] = cs.editor_logical;
        j["editor_subruns"] = cs.editor_subruns;
        j["config"] = fingerprint;
        j["ledger"] = ledger.to_json(false);
        auto vs = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < views.size(); ++i)
            vs.push_back({{"id", views[i].id}, {"image", img_names_[i]}, {"mask", mask_names_[i]}});
        j["views"] = vs;
        if (mix_names_.empty())
            j["mixups"] = nullptr;
        else
            j["mixups"] = mix_names_;

        std::filesystem::path tmp = dir_ / "state.json.tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw IoError("cannot write checkpoint state: " + tmp.string());
            out << j.dump(2) << "\n";
        }
        std::filesystem::rename(tmp, dir_ / "state.json");
        prune();
    }

    // Restores position, counters, ledger, and the per-view images/masks
    // (and mixups when present). rho is recomputed by the caller.
    CheckpointState load(std::vector<ViewRecord>& views, std::vector<ImageBuffer>& mixups,
                         RunLedger& ledger, nlohmann::ordered_json& fingerprint_out) {
        std::ifstream in(dir_ / "state.json", std::ios::binary);
        if (!in) throw IoError("no checkpoint at " + dir_.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("unreadable checkpoint state: " + std::string(e.what()));
        }
        try {
            if (j.at("version").get<std::string>() != "viewprop-ckpt-1")
                throw IoError("unsupported checkpoint version");
            generation_ = j.at("generation").get<std::uint64_t>();

            CheckpointState cs;
            cs.stage = stage_from_name(j.at("stage").get<std::string>());
            cs.warmup_done = j.at("warmup_done").get<int>();
            cs.blend_done = j.at("blend_done").get<int>();
            cs.post_done = j.at("post_done").get<int>();
            cs.key_views = j.at("key_views").get<std::vector<int>>();
            cs.finished = j.at("finished").get<bool>();
            cs.editor_logical = j.at("editor_logical").get<std::uint64_t>();
            cs.editor_subruns = j.at("editor_subruns").get<std::uint64_t>();
            fingerprint_out = j.at("config");
            ledger = RunLedger::from_json(j.at("ledger"));

            const auto& vs = j.at("views");
            if (vs.size() != views.size())
                throw IoError("checkpoint view count disagrees with the input dataset");
            img_names_.assign(views.size(), "");
            mask_names_.assign(views.size(), "");
            for (std::size_t i = 0; i < views.size(); ++i) {
                if (vs[i].at("id").get<int>() != views[i].id)
                    throw IoError("checkpoint view ids disagree with the input dataset");
                img_names_[i] = vs[i].at("image").get<std::string>();
                mask_names_[i] = vs[i].at("mask").get<std::string>();
                views[i].image = read_raw_image(dir_ / img_names_[i]);
                views[i].modified = read_png_mask(dir_ / mask_names_[i]);
                views[i].validate();
            }
            mixups.clear();
            mix_names_.clear();
            if (!j.at("mixups").is_null()) {
                mix_names_ = j.at("mixups").get<std::vector<std::string>>();
                if (mix_names_.size() != views.size())
                    throw IoError("checkpoint mixup count disagrees with the input dataset");
                for (const auto& name : mix_names_) mixups.push_back(read_raw_image(dir_ / name));
            }
            return cs;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed checkpoint state: " + std::string(e.what()));
        }
    }

private:
    std::string file_name(const char* prefix, int id, const char* ext) const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%s_g%llu%s", prefix,
                      viewprop::detail::view_basename(id).c_str(),
                      static_cast<unsigned long long>(generation_), ext);
        return buf;
    }

    void prune() {
        std::set<std::string> keep(img_names_.begin(), img_names_.end());
        keep.insert(mask_names_.begin(), mask_names_.end());
        keep.insert(mix_names_.begin(), mix_names_.end());
        keep.insert("state.json");
        for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
            std::string name = entry.path().filename().string();
            if (!keep.count(name)) std::filesystem::remove(entry.path());
        }
    }

    std::filesystem::path dir_;
    std::uint64_t generation_ = 0;
    std::vector<std::string> img_names_, mask_names_, mix_names_;
};

class InvocationSampler {
public:
    explicit InvocationSampler(EditorHandle& h) : handle_(&h) { sync(); }
    void sync() {
        last_logical_ = handle_->logical_invocations();
        last_subruns_ = handle_->recorded_subruns();
    }
    void accumulate(RunLedger& ledger, const std::string& stage) {
        std::uint64_t l = handle_->logical_invocations();
        std::uint64_t s = handle_->recorded_subruns();
        ledger.stages[stage].logical += l - last_logical_;
        ledger.stages[stage].subruns += s - last_subruns_;
        last_logical_ = l;
        last_subruns_ = s;
    }

private:
    EditorHandle* handle_;
    std::uint64_t last_logical_ = 0;
    std::uint64_t last_subruns_ = 0;
};

class StageTimer {
public:
    StageTimer(RunLedger& ledger, std::string stage)
        : ledger_(&ledger), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
        ledger_->timings[stage_] += dt.count();
    }
    StageTimer(const StageTimer&) = delete;
    StageTimer& operator=(const StageTimer&) = delete;

private:
    RunLedger* ledger_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_;
};

template <typename Fn>
inline void run_stage_checked(const char* stage, Fn&& fn) {
    auto wrap = [&](const char* what) { return std::string(stage) + " stage: " + what; };
    try {
        fn();
    } catch (const IoError& e) {
        throw IoError(wrap(e.what()));
    } catch (const GenerationError& e) {
        throw GenerationError(wrap(e.what()));
    } catch (const EditorError& e) {
        throw EditorError(wrap(e.what()));
    } catch (const MetricError& e) {
        throw MetricError(wrap(e.what()));
    } catch (const Error& e) {
        throw Error(wrap(e.what()));
    }
}

}  // namespace detail

struct PipelineOptions {
    std::filesystem::path checkpoint_dir;  // empty: checkpointing disabled
    bool resume = false;
    RunObservers observers;
};

struct PipelineResult {
    std::vector<ViewRecord> views;     // final images, original geometry
    std::vector<ImageBuffer> mixups;   // pre-blend propagated images
    PropagationState state;
    RunLedger ledger;
};

inline PipelineResult run_pipeline(const DatasetManifest& input, EditorHandle& editor,
                                   const RunConfig& config, const PipelineOptions& options = {}) {
    config.validate();
    input.validate();
    for (const auto& v : input.views) v.validate();

    PipelineResult result;
    result.views = input.views;
    std::vector<ViewRecord>& views = result.views;
    std::vector<ImageBuffer>& mixups = result.mixups;
    RunLedger& ledger = result.ledger;
    const int n = static_cast<int>(views.size());

    std::vector<ImageBuffer> originals;
    originals.reserve(views.size());
    for (const auto& v : views) originals.push_back(v.image);

    PropagationState& state = result.state;
    state = init_propagation(views);

    detail::Checkpointer ckpt(options.checkpoint_dir);
    nlohmann::ordered_json fingerprint = detail::config_fingerprint(config, views);
    detail::CheckpointState cs;

    std::vector<int> all_views(static_cast<std::size_t>(n));
    std::iota(all_views.begin(), all_views.end(), 0);

    if (options.resume) {
        if (!ckpt.exists())
            throw IoError("resume requested but no checkpoint found under " +
                          options.checkpoint_dir.string());
        nlohmann::ordered_json stored;
        cs = ckpt.load(views, mixups, ledger, stored);
        // Key order differs between the parsed checkpoint and a freshly
        // built fingerprint; compare as plain (sorted-key) values.
        if (nlohmann::json(stored) != nlohmann::json(fingerprint))
            throw Error("resume refused: run configuration does not match the checkpoint");
        editor.restore_counters(cs.editor_logical, cs.editor_subruns);
        state.key_views = cs.key_views;
        state.finished = cs.finished;
        for (int i = 0; i < n; ++i)
            state.rho[static_cast<std::size_t>(i)] = modified_ratio(views[static_cast<std::size_t>(i)]);
        log_info("resumed from checkpoint at stage '" + std::string(stage_name(cs.stage)) + "'");
    } else if (ckpt.enabled()) {
        if (ckpt.exists())
            throw IoError("checkpoint already present under " + options.checkpoint_dir.string() +
                          " (pass resume to continue it)");
        cs.editor_logical = editor.logical_invocations();
        cs.editor_subruns = editor.recorded_subruns();
        ckpt.save(views, mixups, cs, ledger, fingerprint, all_views, all_views, false);
    }

    detail::InvocationSampler sampler(editor);
    const int workers = config.worker_count;

    auto publish = [&](const std::vector<int>& changed_images,
                       const std::vector<int>& changed_masks, bool write_mixups) {
        cs.key_views = state.key_views;
        cs.finished = state.finished;
        cs.editor_logical = editor.logical_invocations();
        cs.editor_subruns = editor.recorded_subruns();
        ckpt.save(views, mixups, cs, ledger, fingerprint, changed_images, changed_masks,
                  write_mixups);
    };

    // ── warm-up ─────────────────────────────────────────────────────────
    detail::run_stage_checked("warm-up", [&] {
        if (cs.stage != PipelineStage::Warmup) return;
        detail::StageTimer timer(ledger, "warmup");
        PropagationConfig step = config.propagation;
        for (int it = cs.warmup_done; it < config.propagation.warmup_iterations; ++it) {
            step.warmup_iterations = it + 1;
            run_warmup(views, originals, editor, config.editor, config.key_edit, step,
                       config.filter, it);
            cs.warmup_done = it + 1;
            sampler.accumulate(ledger, "warmup");
            publish(all_views, {}, false);
        }
        cs.stage = PipelineStage::KeyLoop;
        publish({}, {}, false);
    });

    // ── key-view loop ───────────────────────────────────────────────────
    detail::run_stage_checked("key-view", [&] {
        if (cs.stage != PipelineStage::KeyLoop) return;
        detail::StageTimer timer(ledger, "key_loop");
        const bool serial_fanout =
            static_cast<bool>(options.observers.before_mixup) ||
            static_cast<bool>(options.observers.after_mixup);
        while (auto selected = select_next_key_view(views, state, config.propagation)) {
            int ki = *selected;
            state.key_views.push_back(ki);
            std::uint64_t kidx = state.key_views.size() - 1;
            ViewRecord& key = views[static_cast<std::size_t>(ki)];

            EditRequest req;
            req.input = key.image;
            req.condition = originals[static_cast<std::size_t>(ki)];
            req.config = config.editor;
            double u = uniform01(derive_seed(config.propagation.seed, "key_t", kidx));
            req.config.timestep_t =
                config.key_edit.t_min + (config.key_edit.t_max - config.key_edit.t_min) * u;
            req.config.diffusion_steps = config.key_edit.diffusion_steps;
            req.config.seed = derive_seed(config.propagation.seed, "key_seed", kidx);
            key.image = edit(editor, req);
            key.modified.set_all(true);
            state.rho[static_cast<std::size_t>(ki)] = 1.0;
            ledger.key_view_trace.push_back(key.id);
            sampler.accumulate(ledger, "key_edit");

            std::vector<int> targets;
            for (int i = 0; i < n; ++i)
                if (i != ki) targets.push_back(i);
            auto mix_one = [&](int t) {
                int target = targets[static_cast<std::size_t>(t)];
                if (options.observers.before_mixup)
                    options.observers.before_mixup(views, target, ki);
                apply_projection_mixup(views, target, ki, state, config.filter);
                if (options.observers.after_mixup) options.observers.after_mixup(views, target, ki);
            };
            parallel_for(static_cast<int>(targets.size()), serial_fanout ? 1 : workers, mix_one);

            if (options.observers.after_key_iteration)
                options.observers.after_key_iteration(views, state);
            ledger.rho_history.push_back(state.rho);
            publish(all_views, all_views, false);
        }
        cs.stage = PipelineStage::Blend;
        mixups.clear();
        for (const auto& v : views) mixups.push_back(v.image);
        publish({}, {}, true);
    });

    // ── two-pass blend ──────────────────────────────────────────────────
    detail::run_stage_checked("blend", [&] {
        if (cs.stage != PipelineStage::Blend) return;
        detail::StageTimer timer(ledger, "blend");
        for (int start = cs.blend_done; start < n;) {
            int end = std::min(n, start + workers);
            parallel_for(end - start, workers, [&](int k) {
                int i = start + k;
                EditorConfig bc = config.editor;
                bc.seed = derive_seed(config.propagation.seed, "blend_view",
                                      static_cast<std::uint64_t>(i));
                views[static_cast<std::size_t>(i)].image =
                    blend_refine(editor, originals[static_cast<std::size_t>(i)],
                                 mixups[static_cast<std::size_t>(i)], bc);
            });
            cs.blend_done = end;
            sampler.accumulate(ledger, "blend");
            std::vector<int> batch;
            for (int i = start; i < end; ++i) batch.push_back(i);
            publish(batch, {}, false);
            start = end;
        }
        cs.stage = config.post_refine ? PipelineStage::PostRefine : PipelineStage::Done;
        publish({}, {}, false);
    });

    // ── post-refinement ─────────────────────────────────────────────────
    detail::run_stage_checked("post-refinement", [&] {
        if (cs.stage != PipelineStage::PostRefine) return;
        detail::StageTimer timer(ledger, "post_refine");
        ledger.post_refined = true;
        for (int start = cs.post_done; start < n;) {
            int end = std::min(n, start + workers);
            parallel_for(end - start, workers, [&](int k) {
                int i = start + k;
                EditorConfig pc = config.editor;
                pc.seed = derive_seed(config.propagation.seed, "post_view",
                                      static_cast<std::uint64_t>(i));
                views[static_cast<std::size_t>(i)].image =
                    post_refine(editor, views[static_cast<std::size_t>(i)].image,
                                mixups[static_cast<std::size_t>(i)], pc);
            });
            cs.post_done = end;
            sampler.accumulate(ledger, "post_refine");
            std::vector<int> batch;
            for (int i = start; i < end; ++i) batch.push_back(i);
            publish(batch, {}, false);
            start = end;
        }
        cs.stage = PipelineStage::Done;
        publish({}, {}, false);
    });

    // A ledger loaded from a finished checkpoint keeps its post flag; a
    // fresh pass through the stage set it above.
    if (config.post_refine) ledger.post_refined = true;
    return result;
}

// ── full run with file outputs ──────────────────────────────────────────

struct RunAllResult {
    RunLedger ledger;
    MetricReport metrics;        // meaningful when metrics were enabled
    bool metrics_failed = false;
};

// Loads the dataset, runs the pipeline with checkpoints under
// <out_dir>/checkpoint, and writes:
//   <out_dir>/dataset/      edited dataset (original geometry)
//   <out_dir>/ledger.json   invocation ledger
//   <out_dir>/metrics.json  metric report (only when metrics are enabled)
// Metric failures are recorded in the report, not thrown: the edit result
// is already on disk by then.
inline RunAllResult run_all(const std::filesystem::path& input_dir,
                            const std::filesystem::path& out_dir, const RunConfig& config,
                            bool resume = false, const RunObservers& observers = {}) {
    config.validate();
    DatasetManifest input = load_dataset(input_dir);
    std::filesystem::create_directories(out_dir);

    EditorHandle editor = make_editor(config.editor_spec, out_dir / "editor_work",
                                      config.editor_timeout);
    PipelineOptions options;
    options.checkpoint_dir = out_dir / "checkpoint";
    options.resume = resume;
    options.observers = observers;

    PipelineResult run = run_pipeline(input, editor, config, options);

    DatasetManifest output;
    output.version = input.version;
    output.depth_scale = input.depth_scale;
    output.views = run.views;
    save_dataset(out_dir / "dataset", output);

    RunAllResult result;
    result.ledger = run.ledger;

    if (config.metrics_enabled) {
        ReportOptions ropts;
        if (!config.original_caption.empty()) ropts.original_caption = config.original_caption;
        ropts.edited_caption = !config.edited_caption.empty() ? config.edited_caption
                               : !config.editor.instruction.empty()
                                   ? config.editor.instruction
                                   : ropts.edited_caption;
        BuiltinEmbeddingProvider provider;
        result.metrics =
            report(input.views, run.views, provider, ropts, run.ledger.stages, config.filter);
        result.metrics_failed = result.metrics.has_errors();
        std::ofstream out(out_dir / "metrics.json", std::ios::binary);
        if (!out) throw IoError("cannot write metrics.json under " + out_dir.string());
        out << result.metrics.to_json().dump(2) << "\n";
    }

    {
        std::ofstream out(out_dir / "ledger.json", std::ios::binary);
        if (!out) throw IoError("cannot write ledger.json under " + out_dir.string());
        out << result.ledger.to_json(config.emit_timings).dump(2) << "\n";
    }
    return result;
}

}  // namespace viewprop
