// viewprop command-line tool.
//
// Subcommands:
//   gen-scene       render a synthetic posed RGB-D dataset
//   propagate       run the full edit-propagation pipeline
//   metrics         score an edited dataset against its original
//   propagate-mask  spread a region mask across views
//   inspect         summarize a dataset, optionally as a contact sheet
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure (including any
// metric that could not be computed by the metrics subcommand).
#include <CLI11.hpp>

#include <viewprop/viewprop.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

struct GenArgs {
    std::string preset;
    int views = 20;
    int res = 128;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_gen_scene(const GenArgs& a) {
    viewprop::SyntheticSceneSpec spec = viewprop::make_preset(a.preset, a.views, a.res, a.seed);
    viewprop::DatasetManifest data = viewprop::gen_synthetic(spec);
    viewprop::save_dataset(a.out, data);
    std::printf("wrote %d views (%dx%d, preset %s) to %s\n", a.views, a.res, a.res,
                a.preset.c_str(), a.out.c_str());
}

struct PropagateArgs {
    std::string input;
    std::string out;
    viewprop::RunConfig config;
    bool no_post_refine = false;
    bool resume = false;
};

void print_ledger(const viewprop::RunLedger& ledger) {
    std::printf("key views:");
    for (int id : ledger.key_view_trace) std::printf(" %d", id);
    std::printf("\n%-12s %10s %10s\n", "stage", "logical", "subruns");
    for (const auto& [name, c] : ledger.stages)
        std::printf("%-12s %10llu %10llu\n", name.c_str(),
                    static_cast<unsigned long long>(c.logical),
                    static_cast<unsigned long long>(c.subruns));
    std::printf("%-12s %10llu\n", "total", static_cast<unsigned long long>(ledger.total_logical()));
}

void cmd_propagate(PropagateArgs& a) {
    a.config.post_refine = !a.no_post_refine;
    viewprop::RunAllResult result = viewprop::run_all(a.input, a.out, a.config, a.resume);
    print_ledger(result.ledger);
    std::printf("dataset: %s\n", (std::filesystem::path(a.out) / "dataset").c_str());
    std::printf("ledger:  %s\n", (std::filesystem::path(a.out) / "ledger.json").c_str());
    if (a.config.metrics_enabled) {
        std::printf("metrics: %s\n", (std::filesystem::path(a.out) / "metrics.json").c_str());
        for (const auto& [metric, why] : result.metrics.errors)
            std::fprintf(stderr, "warning: %s unavailable: %s\n", metric.c_str(), why.c_str());
    }
}

struct MetricsArgs {
    std::string original;
    std::string edited;
    std::string provider = "builtin";
    std::string provider_workdir;
    double provider_timeout = 300.0;
    std::string orig_caption = "a photo of a scene";
    std::string edit_caption = "an edited photo of a scene";
    std::string out;
    viewprop::FilterPolicy policy;
};

int cmd_metrics(const MetricsArgs& a) {
    viewprop::DatasetManifest orig = viewprop::load_dataset(a.original);
    viewprop::DatasetManifest edit = viewprop::load_dataset(a.edited);
    if (orig.views.size() != edit.views.size())
        throw std::invalid_argument("metrics: datasets have different view counts");
    for (std::size_t i = 0; i < orig.views.size(); ++i)
        if (orig.views[i].id != edit.views[i].id)
            throw std::invalid_argument("metrics: datasets disagree on view ids");

    std::unique_ptr<viewprop::EmbeddingProvider> provider;
    if (a.provider == "builtin") {
        provider = std::make_unique<viewprop::BuiltinEmbeddingProvider>();
    } else if (a.provider.rfind("exec:", 0) == 0) {
        std::filesystem::path workdir =
            a.provider_workdir.empty()
                ? std::filesystem::temp_directory_path() / "viewprop_embed"
                : std::filesystem::path(a.provider_workdir);
        provider = std::make_unique<viewprop::ExternalEmbeddingProvider>(
            a.provider.substr(5), workdir, a.provider_timeout);
    } else {
        throw std::invalid_argument("metrics: provider must be 'builtin' or 'exec:<command>'");
    }

    viewprop::ReportOptions ropts;
    ropts.original_caption = a.orig_caption;
    ropts.edited_caption = a.edit_caption;
    viewprop::MetricReport rep =
        viewprop::report(orig.views, edit.views, *provider, ropts, {}, a.policy);

    std::string text = rep.to_json().dump(2) + "\n";
    if (a.out.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        std::ofstream file(a.out, std::ios::binary);
        if (!file) throw viewprop::IoError("cannot write " + a.out);
        file << text;
        std::printf("metrics: %s\n", a.out.c_str());
    }
    if (rep.has_errors()) {
        for (const auto& [metric, why] : rep.errors)
            std::fprintf(stderr, "error: %s: %s\n", metric.c_str(), why.c_str());
        return 2;
    }
    return 0;
}

struct MaskArgs {
    std::string input;
    int seed_view = 0;
    std::string mask;
    double overlap = 0.5;
    std::string out;
    viewprop::FilterPolicy policy;
};

void cmd_propagate_mask(const MaskArgs& a) {
    viewprop::DatasetManifest data = viewprop::load_dataset(a.input);
    int seed_index = -1;
    for (std::size_t i = 0; i < data.views.size(); ++i)
        if (data.views[i].id == a.seed_view) seed_index = static_cast<int>(i);
    if (seed_index < 0)
        throw std::invalid_argument("propagate-mask: no view with id " +
                                    std::to_string(a.seed_view));
    viewprop::BinaryMask seed_mask = viewprop::read_png_mask(a.mask);
    viewprop::MaskPropagationResult result =
        viewprop::propagate_mask(data.views, seed_index, seed_mask, a.overlap, a.policy);

    std::filesystem::path out_dir(a.out);
    std::filesystem::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["seed_view"] = a.seed_view;
    j["overlap_threshold"] = a.overlap;
    auto accepted = nlohmann::ordered_json::array();
    for (int idx : result.accepted) {
        int id = data.views[static_cast<std::size_t>(idx)].id;
        std::string name = viewprop::detail::view_basename(id) + "_mask.png";
        viewprop::write_png_mask(out_dir / name,
                                 result.masks[static_cast<std::size_t>(idx)]);
        accepted.push_back({{"id", id}, {"mask", name}});
    }
    j["accepted"] = accepted;
    std::ofstream file(out_dir / "mask_propagation.json", std::ios::binary);
    if (!file) throw viewprop::IoError("cannot write mask_propagation.json under " + a.out);
    file << j.dump(2) << "\n";
    std::printf("accepted %zu of %zu views; masks in %s\n", result.accepted.size(),
                data.views.size(), a.out.c_str());
}

struct InspectArgs {
    std::string input;
    std::string contact_sheet;
};

void cmd_inspect(const InspectArgs& a) {
    viewprop::DatasetManifest data = viewprop::load_dataset(a.input);
    std::printf("%zu views, depth scale %g m/unit\n", data.views.size(), data.depth_scale);
    std::printf("%4s %9s %12s %21s\n", "id", "size", "valid depth", "mean rgb");
    for (const auto& v : data.views) {
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int y = 0; y < v.intrinsics.height; ++y)
            for (int x = 0; x < v.intrinsics.width; ++x) mean += v.image.rgb(x, y);
        mean /= static_cast<double>(v.image.pixel_count());
        std::printf("%4d %4dx%-4d %11.1f%% (%.3f, %.3f, %.3f)\n", v.id, v.intrinsics.width,
                    v.intrinsics.height, 100.0 * v.depth.valid_fraction(), mean.x(), mean.y(),
                    mean.z());
    }
    if (a.contact_sheet.empty()) return;

    constexpr int kThumb = 64;
    int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(data.views.size()))));
    int rows = (static_cast<int>(data.views.size()) + cols - 1) / cols;
    viewprop::ImageBuffer sheet(cols * kThumb, rows * kThumb, 0.0);
    for (std::size_t k = 0; k < data.views.size(); ++k) {
        const viewprop::ImageBuffer& img = data.views[k].image;
        int ox = static_cast<int>(k) % cols * kThumb;
        int oy = static_cast<int>(k) / cols * kThumb;
        for (int y = 0; y < kThumb; ++y)
            for (int x = 0; x < kThumb; ++x) {
                int sx = std::min(img.width - 1, x * img.width / kThumb);
                int sy = std::min(img.height - 1, y * img.height / kThumb);
                sheet.set_rgb(ox + x, oy + y, img.rgb(sx, sy));
            }
    }
    viewprop::write_png_rgb8(a.contact_sheet, sheet);
    std::printf("contact sheet: %s\n", a.contact_sheet.c_str());
}

void add_filter_options(CLI::App* sub, viewprop::FilterPolicy& policy) {
    sub->add_option("--max-reproj-error", policy.max_reprojection_error,
                    "reprojection cycle error cap in pixels");
    sub->add_option("--depth-tolerance", policy.depth_agreement_tolerance,
                    "relative depth agreement tolerance");
    sub->add_option("--depth-discontinuity", policy.depth_discontinuity_tolerance,
                    "relative depth spread rejected by bilinear depth sampling");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-view edit propagation over posed RGB-D datasets"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default(true);
    int exit_override = 0;

    GenArgs gen;
    CLI::App* sub_gen = app.add_subcommand("gen-scene", "render a synthetic dataset");
    sub_gen->add_option("--preset", gen.preset,
                        "plane-ring, plane-ring-soft, or sphere-over-plane")
        ->required();
    sub_gen->add_option("--views", gen.views, "number of ring cameras");
    sub_gen->add_option("--res", gen.res, "square image resolution");
    sub_gen->add_option("--seed", gen.seed, "generation seed");
    sub_gen->add_option("--out", gen.out, "output dataset directory")->required();
    sub_gen->callback([&] { cmd_gen_scene(gen); });

    PropagateArgs prop;
    CLI::App* sub_prop = app.add_subcommand("propagate", "run the edit-propagation pipeline");
    sub_prop->add_option("--input", prop.input, "input dataset directory")->required();
    sub_prop->add_option("--out", prop.out, "output directory")->required();
    sub_prop->add_option("--instruction", prop.config.editor.instruction, "edit instruction");
    sub_prop->add_option("--editor", prop.config.editor_spec,
                         "mock:<name> or exec:<command>");
    sub_prop->add_option("--phi", prop.config.propagation.phi, "key-view weight peak");
    sub_prop->add_option("--stop-ratio", prop.config.propagation.stop_ratio,
                         "minimum modified ratio at termination");
    sub_prop->add_option("--lambda", prop.config.propagation.lambda, "warm-up blend weight");
    sub_prop->add_option("--warmup", prop.config.propagation.warmup_iterations,
                         "warm-up iterations");
    sub_prop->add_option("--n-r", prop.config.editor.n_r, "averaged sub-runs per refinement");
    sub_prop->add_option("--blend-t", prop.config.editor.timestep_t,
                         "blend/post-refine timestep");
    sub_prop->add_option("--blend-steps", prop.config.editor.diffusion_steps,
                         "blend/post-refine diffusion steps");
    sub_prop->add_option("--key-t-min", prop.config.key_edit.t_min, "key edit timestep lower bound");
    sub_prop->add_option("--key-t-max", prop.config.key_edit.t_max, "key edit timestep upper bound");
    sub_prop->add_option("--key-steps", prop.config.key_edit.diffusion_steps,
                         "key edit diffusion steps");
    sub_prop->add_option("--s-i,--image-guidance", prop.config.editor.image_guidance,
                         "image guidance scale");
    sub_prop->add_option("--s-t,--text-guidance", prop.config.editor.text_guidance,
                         "text guidance scale");
    sub_prop->add_option("--seed", prop.config.propagation.seed, "run seed");
    sub_prop->add_flag("--no-post-refine", prop.no_post_refine, "skip post-refinement");
    sub_prop->add_flag("--metrics", prop.config.metrics_enabled, "write metrics.json");
    sub_prop->add_option("--orig-caption", prop.config.original_caption,
                         "caption for the unedited scene");
    sub_prop->add_option("--edit-caption", prop.config.edited_caption,
                         "caption for the edited scene (defaults to the instruction)");
    sub_prop->add_option("--workers", prop.config.worker_count, "parallel edit workers");
    sub_prop->add_option("--editor-timeout", prop.config.editor_timeout,
                         "external editor timeout in seconds");
    sub_prop->add_flag("--resume", prop.resume, "continue from the checkpoint in --out");
    sub_prop->add_flag("--timings", prop.config.emit_timings,
                       "include wall-clock timings in ledger.json");
    add_filter_options(sub_prop, prop.config.filter);
    sub_prop->callback([&] { cmd_propagate(prop); });

    MetricsArgs met;
    CLI::App* sub_met = app.add_subcommand("metrics", "score an edited dataset");
    sub_met->add_option("--original", met.original, "original dataset directory")->required();
    sub_met->add_option("--edited", met.edited, "edited dataset directory")->required();
    sub_met->add_option("--provider", met.provider, "builtin or exec:<command>");
    sub_met->add_option("--provider-workdir", met.provider_workdir,
                        "work directory for an exec provider");
    sub_met->add_option("--provider-timeout", met.provider_timeout,
                        "exec provider timeout in seconds");
    sub_met->add_option("--orig-caption", met.orig_caption, "caption for the original scene");
    sub_met->add_option("--edit-caption", met.edit_caption, "caption for the edited scene");
    sub_met->add_option("--out", met.out, "write the report here instead of stdout");
    add_filter_options(sub_met, met.policy);
    sub_met->callback([&] { exit_override = cmd_metrics(met); });

    MaskArgs mask;
    CLI::App* sub_mask = app.add_subcommand("propagate-mask", "spread a region mask across views");
    sub_mask->add_option("--input", mask.input, "input dataset directory")->required();
    sub_mask->add_option("--seed-view", mask.seed_view, "view id the mask belongs to")->required();
    sub_mask->add_option("--mask", mask.mask, "seed mask PNG (nonzero = selected)")->required();
    sub_mask->add_option("--overlap", mask.overlap, "minimum IoU to keep going");
    sub_mask->add_option("--out", mask.out, "output directory")->required();
    add_filter_options(sub_mask, mask.policy);
    sub_mask->callback([&] { cmd_propagate_mask(mask); });

    InspectArgs ins;
    CLI::App* sub_ins = app.add_subcommand("inspect", "summarize a dataset");
    sub_ins->add_option("--input", ins.input, "dataset directory")->required();
    sub_ins->add_option("--contact-sheet", ins.contact_sheet, "write a thumbnail grid PNG");
    sub_ins->callback([&] { cmd_inspect(ins); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const viewprop::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return exit_override;
}
