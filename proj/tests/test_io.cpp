#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "unfoldseg/config.hpp"
#include "unfoldseg/image_io.hpp"
#include "unfoldseg/solver.hpp"
#include "unfoldseg/synth.hpp"
#include "unfoldseg/textio.hpp"
#include "unfoldseg/trace.hpp"

using namespace unfoldseg;
using testutil::random_tensor;

TEST_CASE("pgm round-trip stays within half a quantum") {
    SplitMix64 rng(90);
    const Tensor m = random_tensor(rng, 7, 9, 1);
    for (bool binary : {true, false}) {
        const Tensor back = parse_netpbm(render_netpbm(m, binary), "mem");
        REQUIRE(back.same_shape(m));
        for (std::size_t i = 0; i < m.size(); ++i)
            CHECK(std::fabs(back[i] - m[i]) <= 0.5 / 255.0 + 1e-12);
    }
}

TEST_CASE("ppm round-trip for color images") {
    SplitMix64 rng(92);
    const Tensor img = random_tensor(rng, 4, 5, 3);
    const Tensor back = parse_netpbm(render_netpbm(img, true), "mem");
    CHECK(back.channels() == 3);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(std::fabs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("P2 and P5 encodings load identically") {
    SplitMix64 rng(94);
    const Tensor m = random_tensor(rng, 6, 6, 1);
    const Tensor a = parse_netpbm(render_netpbm(m, true), "p5");
    const Tensor b = parse_netpbm(render_netpbm(m, false), "p2");
    CHECK(ops::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("ascii variant tolerates comments") {
    const Tensor t =
        parse_netpbm("P2\n# a comment\n2 2\n# another\n255\n0 128\n255 64\n", "mem");
    CHECK(t.at(0, 1, 0) == doctest::Approx(128.0 / 255.0));
    CHECK(t.at(1, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("truncated raster reports the byte offset") {
    const std::string good = render_netpbm(Tensor(4, 4, 1, 0.5), true);
    const std::string bad = good.substr(0, good.size() - 5);
    try {
        parse_netpbm(bad, "mem");
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.offset <= bad.size());
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("malformed headers are rejected with offsets") {
    CHECK_THROWS_AS(parse_netpbm("P5\nabc\n", "mem"), parse_error);
    CHECK_THROWS_AS(parse_netpbm("Q5\n2 2\n255\n", "mem"), parse_error);
    CHECK_THROWS_AS(parse_netpbm("P5\n2 2\n", "mem"), parse_error);
}

TEST_CASE("maxval other than 255 is unsupported") {
    CHECK_THROWS_AS(parse_netpbm("P5\n2 2\n65535\n", "mem"), unsupported_format);
    CHECK_THROWS_AS(parse_netpbm("P1\n2 2\n", "mem"), unsupported_format);
}

TEST_CASE("file save/load round-trip") {
    SplitMix64 rng(96);
    const Tensor m = random_tensor(rng, 5, 5, 1);
    const auto path = (std::filesystem::temp_directory_path() / "unfoldseg_io.pgm").string();
    save_mask(path, m);
    const Tensor back = load_image(path);
    for (std::size_t i = 0; i < m.size(); ++i)
        CHECK(std::fabs(back[i] - m[i]) <= 0.5 / 255.0 + 1e-12);
    std::filesystem::remove(path);
}

TEST_CASE("config: empty text keeps every default") {
    const RunConfig cfg = parse_config("");
    CHECK(cfg.mode == "solve");
    CHECK(cfg.solver.alpha == 0.1);
    CHECK(cfg.solver.mu == 1.0);
    CHECK(cfg.solver.lambda == 1.0);
    CHECK(cfg.solver.lipschitz == 1.0);
    CHECK(cfg.solver.eps_l1 == 1e-3);
    CHECK(cfg.solver.stages == 4);
    CHECK(cfg.solver.qa_no_alpha == false);
    CHECK(cfg.solver.threshold == 0.5);
    CHECK(cfg.training.steps == 2000);
    CHECK(cfg.training.lr == 1e-4);
    CHECK(cfg.training.batch_size == 4);
    CHECK(cfg.training.seed == 7);
}

TEST_CASE("config: assignments, comments, nesting") {
    const RunConfig cfg = parse_config(
        "# run settings\n"
        "mode = train\n"
        "solver.stages = 4\n"
        "solver.alpha = 0.25  # inline comment\n"
        "solver.prox_mask = clamp+tv\n"
        "training.steps = 10\n"
        "paths.input = scenes/manifest.tsv\n");
    CHECK(cfg.mode == "train");
    CHECK(cfg.solver.stages == 4);
    CHECK(cfg.solver.alpha == 0.25);
    CHECK(cfg.solver.mask_prox == MaskProx::kClampTv);
    CHECK(cfg.training.steps == 10);
    CHECK(cfg.paths.input == "scenes/manifest.tsv");
}

TEST_CASE("config: errors name the offending key") {
    SUBCASE("unknown key") {
        try {
            parse_config("solver.stagez = 4\n");
            FAIL("expected error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("solver.stagez") != std::string::npos);
        }
    }
    SUBCASE("type mismatch") {
        try {
            parse_config("solver.stages = banana\n");
            FAIL("expected error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("solver.stages") != std::string::npos);
            CHECK(std::string(e.what()).find("type mismatch") != std::string::npos);
        }
    }
    SUBCASE("duplicate key") {
        CHECK_THROWS_AS(parse_config("solver.mu = 1\nsolver.mu = 2\n"), std::invalid_argument);
    }
    SUBCASE("missing equals") {
        CHECK_THROWS_AS(parse_config("solver.mu 1\n"), std::invalid_argument);
    }
}

TEST_CASE("config render/parse identity on randomized configs") {
    SplitMix64 rng(98);
    for (int trial = 0; trial < 25; ++trial) {
        RunConfig cfg;
        const char* modes[] = {"solve", "train", "eval", "synth"};
        cfg.mode = modes[rng.uniform_int(4)];
        cfg.solver.alpha = rng.range(0.0, 2.0);
        cfg.solver.mu = rng.range(0.1, 3.0);
        cfg.solver.lambda = rng.range(0.0, 3.0);
        cfg.solver.lipschitz = rng.range(0.5, 2.0);
        cfg.solver.eps_l1 = rng.range(0.0, 0.01);
        cfg.solver.stages = 1 + rng.uniform_int(8);
        cfg.solver.qa_no_alpha = rng.u01() < 0.5;
        cfg.solver.mask_prox = rng.u01() < 0.5 ? MaskProx::kClamp : MaskProx::kClampTv;
        cfg.solver.background_prox =
            rng.u01() < 0.5 ? BackgroundProx::kClamp : BackgroundProx::kGaussian;
        cfg.solver.tv_weight = rng.range(0.0, 0.5);
        cfg.solver.threshold = rng.range(0.0, 1.0);
        cfg.training.steps = rng.uniform_int(5000);
        cfg.training.lr = rng.range(0.0, 0.01);
        cfg.training.batch_size = 1 + rng.uniform_int(16);
        cfg.training.seed = rng.next();
        cfg.paths.input = "in_" + std::to_string(trial);
        cfg.paths.output = "out dir/file.pgm";
        cfg.paths.checkpoint = "";
        cfg.paths.manifest = "m.tsv";
        CHECK(parse_config(render_config(cfg)) == cfg);
    }
}

TEST_CASE("solve trace format and determinism") {
    SplitMix64 rng(100);
    const Tensor c = random_tensor(rng, 8, 8, 1);
    SolverConfig cfg;
    const SolveResult res = solve(c, cfg);
    const std::string csv = render_solve_trace(res, nullptr, cfg.threshold);
    const std::string csv2 = render_solve_trace(solve(c, cfg), nullptr, cfg.threshold);
    CHECK(csv == csv2);

    // header + one row per stage, LF endings
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 1 + static_cast<std::size_t>(cfg.stages));
    CHECK(csv.rfind("stage,data_energy,sparsity_energy,surrogate_before,surrogate_after,mae,iou\n",
                    0) == 0);
    CHECK(csv.find("\r") == std::string::npos);
    CHECK(csv.find("nan") != std::string::npos);  // no gt supplied

    // surrogate_after <= surrogate_before on every row
    for (const StageTrace& t : res.trace) CHECK(t.surrogate_after <= t.surrogate_before);
}

TEST_CASE("solve trace fills metric columns when gt is present") {
    const Scene scene = generate(suite_scene_spec(0, Difficulty::kEasy, 21, 16));
    SolverConfig cfg;
    const SolveResult res = solve(scene.image, cfg);
    const std::string csv = render_solve_trace(res, &scene.gt, cfg.threshold);
    CHECK(csv.find("nan") == std::string::npos);
}

TEST_CASE("train trace schema") {
    std::vector<TrainCurvePoint> curve;
    curve.push_back({1, {0.5, 0.2, 0.1, 0.1, 0.1}});
    curve.push_back({2, {0.4, 0.15, 0.1, 0.08, 0.07}});
    const std::string csv = render_train_trace(curve);
    CHECK(csv.rfind("step,loss,bce,iou_loss,dice,mse\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 3);
}

TEST_CASE("fmt_double round-trips exactly") {
    SplitMix64 rng(102);
    for (int i = 0; i < 200; ++i) {
        const double v = (rng.u01() - 0.5) * std::pow(10.0, rng.uniform_int(30) - 15);
        double back = 0.0;
        REQUIRE(parse_double(fmt_double(v), back));
        CHECK(back == v);
    }
}
