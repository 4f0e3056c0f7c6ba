// Embedding scores, photometric inconsistency, and the metric report.
#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>

using namespace viewprop;
using namespace testutil;

namespace {

constexpr const char* kEmbedStub =
    "python3 " VIEWPROP_SOURCE_DIR "/tests/stubs/embed_stub.py";

struct EnvVar {
    std::string name;
    EnvVar(const std::string& n, const std::string& value) : name(n) {
        ::setenv(n.c_str(), value.c_str(), 1);
    }
    ~EnvVar() { ::unsetenv(name.c_str()); }
};

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
}

// Unnormalized provider: 3-dim channel means scaled by a constant factor.
// Cosine scores must not depend on the factor.
class ScaledMeanProvider : public EmbeddingProvider {
public:
    explicit ScaledMeanProvider(double factor) : factor_(factor) {}
    Eigen::VectorXd image_embed(const ImageBuffer& image) override {
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) mean += image.rgb(x, y);
        mean /= static_cast<double>(image.pixel_count());
        return factor_ * Eigen::VectorXd(mean);
    }
    Eigen::VectorXd text_embed(const std::string& text) override {
        Eigen::VectorXd out(3);
        for (int k = 0; k < 3; ++k)
            out[k] = factor_ * (2.0 * uniform01(derive_seed(fnv1a64(text), "text_embed",
                                                            static_cast<std::uint64_t>(k))) -
                                1.0);
        return out;
    }

private:
    double factor_;
};

// Two same-pose views over the plane preset; correspondences are exact
// identities, so photometric sums reduce to plain image differences.
std::vector<ViewRecord> duplicate_pose_views(int res) {
    DatasetManifest data = gen_synthetic(make_preset("plane-ring", 2, res));
    data.views[1] = data.views[0];
    data.views[1].id = 1;
    return std::move(data.views);
}

}  // namespace

TEST_CASE("builtin embeddings are unit length or exactly zero") {
    BuiltinEmbeddingProvider provider;
    CHECK(std::abs(provider.image_embed(textured_image(16, 16, 1)).norm() - 1.0) < 1e-9);
    CHECK(std::abs(provider.text_embed("make it a winter wonderland").norm() - 1.0) < 1e-9);
    CHECK(provider.image_embed(ImageBuffer(8, 8, 0.0)).norm() == 0.0);
    CHECK_THROWS_AS(provider.image_embed(ImageBuffer(7, 8, 0.5)), MetricError);
    CHECK(provider.image_embed(textured_image(16, 16, 1)).size() == 64);
}

TEST_CASE("direction score matches an independent recomputation") {
    std::vector<ImageBuffer> originals, edits;
    for (int i = 0; i < 4; ++i) {
        originals.push_back(textured_image(16, 16, 10 + i));
        edits.push_back(textured_image(16, 16, 50 + i));
    }
    BuiltinEmbeddingProvider provider;
    double got = direction_score(originals, edits, "before", "after", provider);

    BuiltinEmbeddingProvider oracle;
    Eigen::VectorXd dt = oracle.text_embed("after") - oracle.text_embed("before");
    double sum = 0.0;
    for (int i = 0; i < 4; ++i)
        sum += cosine(oracle.image_embed(edits[static_cast<std::size_t>(i)]) -
                          oracle.image_embed(originals[static_cast<std::size_t>(i)]),
                      dt);
    REQUIRE(got == Catch::Approx(sum / 4.0).margin(1e-12));
    CHECK(got >= -1.0 - 1e-12);
    CHECK(got <= 1.0 + 1e-12);
}

TEST_CASE("consistency score matches an independent recomputation") {
    std::vector<ImageBuffer> originals, edits;
    for (int i = 0; i < 5; ++i) {
        originals.push_back(textured_image(16, 16, 100 + i));
        edits.push_back(textured_image(16, 16, 200 + i));
    }
    BuiltinEmbeddingProvider provider;
    double got = consistency_score(originals, edits, provider);

    BuiltinEmbeddingProvider oracle;
    double sum = 0.0;
    for (int i = 0; i + 1 < 5; ++i) {
        auto s = static_cast<std::size_t>(i);
        sum += cosine(oracle.image_embed(edits[s + 1]) - oracle.image_embed(edits[s]),
                      oracle.image_embed(originals[s + 1]) - oracle.image_embed(originals[s]));
    }
    REQUIRE(got == Catch::Approx(sum / 4.0).margin(1e-12));
}

TEST_CASE("degenerate embedding differences raise instead of scoring") {
    BuiltinEmbeddingProvider provider;
    std::vector<ImageBuffer> views{textured_image(16, 16, 1), textured_image(16, 16, 2)};

    SECTION("edits identical to originals") {
        CHECK_THROWS_MATCHES(direction_score(views, views, "a", "b", provider), MetricError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("degenerate direction")));
    }
    SECTION("identical captions") {
        std::vector<ImageBuffer> edits{textured_image(16, 16, 3), textured_image(16, 16, 4)};
        CHECK_THROWS_AS(direction_score(views, edits, "same", "same", provider), MetricError);
    }
    SECTION("identical adjacent views") {
        std::vector<ImageBuffer> flat{views[0], views[0]};
        std::vector<ImageBuffer> edits{textured_image(16, 16, 3), textured_image(16, 16, 4)};
        CHECK_THROWS_AS(consistency_score(flat, edits, provider), MetricError);
    }
    SECTION("all-black images embed to zero") {
        std::vector<ImageBuffer> black{ImageBuffer(8, 8, 0.0), ImageBuffer(8, 8, 0.0)};
        std::vector<ImageBuffer> edits{textured_image(8, 8, 3), textured_image(8, 8, 4)};
        CHECK_THROWS_AS(consistency_score(black, edits, provider), MetricError);
    }
    SECTION("argument validation") {
        std::vector<ImageBuffer> one{views[0]};
        CHECK_THROWS_AS(direction_score({}, {}, "a", "b", provider), std::invalid_argument);
        CHECK_THROWS_AS(consistency_score(one, one, provider), std::invalid_argument);
    }
}

TEST_CASE("scores are invariant to uniform embedding scale") {
    std::vector<ImageBuffer> originals, edits;
    for (int i = 0; i < 3; ++i) {
        originals.push_back(textured_image(12, 12, 30 + i));
        edits.push_back(textured_image(12, 12, 60 + i));
    }
    ScaledMeanProvider unit(1.0);
    ScaledMeanProvider scaled(7.5);
    REQUIRE(direction_score(originals, edits, "a", "b", unit) ==
            Catch::Approx(direction_score(originals, edits, "a", "b", scaled)).margin(1e-12));
    REQUIRE(consistency_score(originals, edits, unit) ==
            Catch::Approx(consistency_score(originals, edits, scaled)).margin(1e-12));
}

TEST_CASE("photometric inconsistency on duplicated poses") {
    SECTION("identical constant images score zero up to weight rounding") {
        // Round-tripped correspondences carry ~1e-13 sub-pixel jitter, and
        // bilinear weights at those offsets reproduce a constant only to
        // within an ulp per sample, so the score is tiny but not exact.
        std::vector<ViewRecord> views = duplicate_pose_views(24);
        views[0].image = constant_image(24, 24, 0.3, 0.5, 0.7);
        views[1].image = views[0].image;
        REQUIRE(photometric_inconsistency(views) <= 1e-15);
    }
    SECTION("identical textured images score within rounding of zero") {
        std::vector<ViewRecord> views = duplicate_pose_views(24);
        REQUIRE(photometric_inconsistency(views) <= 1e-12);
    }
    SECTION("one-channel shift scores shift/3") {
        std::vector<ViewRecord> views = duplicate_pose_views(24);
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) views[1].image.at(x, y, 0) = 0.9;
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) views[0].image.at(x, y, 0) = 0.8;
        REQUIRE(photometric_inconsistency(views) ==
                Catch::Approx(0.1 / 3.0).margin(1e-12));
    }
    SECTION("view order reversal does not change the score") {
        std::vector<ViewRecord> views = duplicate_pose_views(24);
        views[1].image = textured_image(24, 24, 77);
        double forward = photometric_inconsistency(views);
        std::swap(views[0], views[1]);
        double backward = photometric_inconsistency(views);
        REQUIRE(forward == Catch::Approx(backward).margin(1e-12));
        REQUIRE(forward > 0.0);
    }
    SECTION("opposed cameras share no correspondences") {
        std::vector<ViewRecord> views = duplicate_pose_views(16);
        Eigen::Matrix3d flip = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
        views[1].pose.rotation = views[1].pose.rotation * flip;
        CHECK_THROWS_MATCHES(photometric_inconsistency(views), MetricError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                                 "no valid correspondences")));
    }
    SECTION("needs two views") {
        std::vector<ViewRecord> views = duplicate_pose_views(16);
        views.pop_back();
        CHECK_THROWS_AS(photometric_inconsistency(views), std::invalid_argument);
    }
}

TEST_CASE("external embedding provider speaks the work-dir protocol") {
    TempDir work;
    ExternalEmbeddingProvider provider(kEmbedStub, work.path);
    ImageBuffer img = textured_image(16, 16, 9);

    Eigen::VectorXd a = provider.image_embed(img);
    Eigen::VectorXd b = provider.image_embed(img);
    Eigen::VectorXd t = provider.text_embed("marble walls");
    REQUIRE(a.size() == 4);
    REQUIRE(std::abs(a.norm() - 1.0) < 1e-6);
    REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a - t).cwiseAbs().maxCoeff() > 0.0);
    CHECK(std::filesystem::exists(work.path / "embed_000000" / "embed_request.json"));
    CHECK(std::filesystem::exists(work.path / "embed_000000" / "input.png"));
    CHECK(std::filesystem::exists(work.path / "embed_000002" / "embed_request.json"));

    CHECK_THROWS_AS(ExternalEmbeddingProvider("", work.path), std::invalid_argument);
}

TEST_CASE("external embedding failures raise metric errors") {
    ImageBuffer img = textured_image(16, 16, 9);

    SECTION("dimension change between calls") {
        TempDir work;
        EnvVar mode("VIEWPROP_STUB_MODE", "dimswitch");
        ExternalEmbeddingProvider provider(kEmbedStub, work.path);
        provider.image_embed(img);
        CHECK_THROWS_MATCHES(provider.text_embed("x"), MetricError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                                 "dimension changed")));
    }
    SECTION("payload not float32-aligned") {
        TempDir work;
        EnvVar mode("VIEWPROP_STUB_MODE", "oddbytes");
        ExternalEmbeddingProvider provider(kEmbedStub, work.path);
        CHECK_THROWS_MATCHES(provider.image_embed(img), MetricError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                                 "not a float32 array")));
    }
    SECTION("nonzero exit") {
        TempDir work;
        EnvVar mode("VIEWPROP_STUB_MODE", "fail");
        ExternalEmbeddingProvider provider(kEmbedStub, work.path);
        CHECK_THROWS_MATCHES(provider.image_embed(img), MetricError,
                             Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                                 "exited with code 3")));
    }
    SECTION("timeout") {
        TempDir work;
        EnvVar mode("VIEWPROP_STUB_MODE", "sleep");
        ExternalEmbeddingProvider provider(kEmbedStub, work.path, 0.2);
        CHECK_THROWS_MATCHES(provider.image_embed(img), MetricError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("timed out")));
    }
}

TEST_CASE("metric report collects scores, errors, and invocation totals") {
    std::map<std::string, StageCount> counts{
        {"warmup", {10, 10}}, {"key_edit", {4, 4}}, {"blend", {8, 40}}, {"post_refine", {4, 20}}};

    std::vector<ViewRecord> originals = duplicate_pose_views(24);
    originals[1].image = textured_image(24, 24, 2);
    std::vector<ViewRecord> edits = originals;
    for (auto& v : edits)
        for (double& p : v.image.data) p = clamp01(p * 0.5 + 0.25);

    BuiltinEmbeddingProvider provider;
    ReportOptions options;

    SECTION("healthy inputs produce all three scores") {
        MetricReport rep = report(originals, edits, provider, options, counts);
        REQUIRE(rep.direction.has_value());
        REQUIRE(rep.consistency.has_value());
        REQUIRE(rep.photometric.has_value());
        CHECK_FALSE(rep.has_errors());
        CHECK(rep.total_logical == 26);

        nlohmann::ordered_json j = rep.to_json();
        CHECK(j["direction_score"].is_number());
        CHECK(j["consistency_score"].is_number());
        CHECK(j["photometric_inconsistency"].is_number());
        CHECK(j["errors"].is_object());
        CHECK(j["errors"].empty());
        CHECK(j["invocations"]["blend"]["logical"] == 8);
        CHECK(j["invocations"]["blend"]["subruns"] == 40);
        CHECK(j["total_logical_invocations"] == 26);
    }
    SECTION("score failures are recorded, not fatal") {
        MetricReport rep = report(originals, originals, provider, options, counts);
        REQUIRE_FALSE(rep.direction.has_value());
        REQUIRE(rep.errors.count("direction_score") == 1);
        CHECK(rep.errors.at("direction_score").find("degenerate") != std::string::npos);
        // Identical edits are still mutually consistent and photometrically clean.
        CHECK(rep.consistency.has_value());
        CHECK(rep.photometric.has_value());
        CHECK(rep.total_logical == 26);
        CHECK(rep.to_json()["direction_score"].is_null());
    }
    SECTION("scores can be disabled wholesale") {
        MetricReport rep = report(originals, edits, provider, options, counts);
        ReportOptions off;
        off.enable_scores = false;
        MetricReport quiet = report(originals, edits, provider, off, counts);
        CHECK_FALSE(quiet.direction.has_value());
        CHECK_FALSE(quiet.consistency.has_value());
        CHECK_FALSE(quiet.photometric.has_value());
        CHECK_FALSE(quiet.has_errors());
        CHECK(quiet.total_logical == rep.total_logical);
    }
}
