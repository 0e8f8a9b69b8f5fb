#include "doctest.h"

#include "meanfield/csv.hpp"
#include "meanfield/errors.hpp"
#include "meanfield/lab.hpp"
#include "meanfield/potentials.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace meanfield;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::path(MEANFIELD_TEST_TMP) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    int code;
    std::string err;
};

/// Runs the CLI with `args`; stderr is captured.
Outcome lab(const std::string& args, const std::string& env = "") {
    const fs::path err = fs::path(MEANFIELD_TEST_TMP) / "stderr.txt";
    fs::create_directories(err.parent_path());
    const std::string cmd = env + " \"" MEANFIELD_LAB_EXE "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

const std::string kSmall = "--dynamics.N=10 --dynamics.T=0.5 --estimator.n_mc=64 --model.d=4 ";

std::string config_error_path(const std::string& experiment, const std::vector<std::string>& flags,
                              const fs::path& file = {}) {
    try {
        (void)parse_and_validate(experiment, file, flags);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<accepted>";
}

}  // namespace

TEST_CASE("every experiment has a valid default tree") {
    for (const auto& e : experiment_names()) {
        CAPTURE(e);
        const RunConfig c = parse_and_validate(e, {}, {});
        CHECK(c.text("experiment") == e);
        for (const auto& [path, src] : c.provenance) CHECK(src == Source::Default);
    }
    CHECK_THROWS_AS(default_config("train-gpt"), ConfigError);
}

TEST_CASE("configuration errors name the offending key") {
    CHECK(config_error_path("run-sgd", {"--dynamics.epz=1"}) == "dynamics.epz");
    CHECK(config_error_path("run-sgd", {"--dynamics.N=-3"}) == "dynamics.N");
    CHECK(config_error_path("run-sgd", {"--dynamics.N=2.5"}) == "dynamics.N");
    CHECK(config_error_path("run-sgd", {"--dynamics.eps=fast"}) == "dynamics.eps");
    CHECK(config_error_path("run-sgd", {"--io.save_states=1"}) == "io.save_states");
    CHECK(config_error_path("run-sgd", {"--study.seeds=[1,\"x\"]"}) == "study.seeds[1]");
    CHECK(config_error_path("run-sgd", {"--model.activation.t1=1", "--model.activation.t2=0"}) ==
          "model.activation.t1 < t2");
    CHECK(config_error_path("run-sgd", {"--dynamics.mode=sideways"}) == "dynamics.mode");
    CHECK(config_error_path("run-sgd", {"--dynamics.h_ode=0.003"}) == "dynamics.h_ode");
    CHECK(config_error_path("gaussians-demo", {"--dynamics.mode=general"}) == "dynamics.mode");
    CHECK(config_error_path("krr-check", {"--dynamics.N=201"}) == "dynamics.N");
    CHECK(config_error_path("fokker-planck-check", {"--model.d=2"}) == "model.d");
    CHECK(config_error_path("run-sgd", {"--model"}) != "<accepted>");

    const fs::path dir = scratch("bad_file");
    std::ofstream(dir / "c.json") << R"({"dynamics": {"eps": 0.01, "lamda": 0.1}})";
    CHECK(config_error_path("run-sgd", {}, dir / "c.json") == "dynamics.lamda");
    std::ofstream(dir / "d.json") << R"({"experiment": "krr-check"})";
    CHECK(config_error_path("run-sgd", {}, dir / "d.json") == "experiment");
    CHECK_THROWS_AS(parse_and_validate("run-sgd", dir / "missing.json", {}), IoError);
}

TEST_CASE("flags override the file and provenance records both") {
    const fs::path dir = scratch("provenance");
    std::ofstream(dir / "c.json") << R"({"dynamics": {"eps": 0.02, "T": 0.4}, "seed": 9})";
    const RunConfig c = parse_and_validate("run-sgd", dir / "c.json", {"--dynamics.eps=1e-3", "io.out_dir=elsewhere"});
    CHECK(c.number("dynamics.eps") == 1e-3);
    CHECK(c.number("dynamics.T") == 0.4);
    CHECK(c.seed_value("seed") == 9);
    CHECK(c.provenance.at("dynamics.eps") == Source::Flag);
    CHECK(c.provenance.at("dynamics.T") == Source::File);
    CHECK(c.provenance.at("dynamics.N") == Source::Default);
    CHECK(c.text("io.out_dir") == "elsewhere");
}

TEST_CASE("command line exit codes") {
    const fs::path dir = scratch("cli");
    const std::string out = " --io.out_dir=" + (dir / "ok").string();
    CHECK(lab("run-sgd " + kSmall + out).code == 0);
    CHECK(fs::exists(dir / "ok" / "config.json"));
    CHECK(fs::exists(dir / "ok" / "provenance.json"));
    CHECK(fs::exists(dir / "ok" / "trajectory.csv"));
    CHECK(fs::exists(dir / "ok" / "summary.csv"));
    CHECK(lab("run-sgd --print-defaults").code == 0);

    CHECK(lab("run-sgd --dynamics.epz=1" + out).code == 2);
    CHECK(lab("no-such-experiment" + out).code == 2);
    const Outcome bad = lab("run-sgd --model.activation.t1=1 --model.activation.t2=0" + out);
    CHECK(bad.code == 2);
    CHECK(bad.err.find("model.activation.t1 < t2") != std::string::npos);

    CHECK(lab("run-sgd --config " + (dir / "missing.json").string() + out).code == 3);
    std::ofstream(dir / "blocker") << "x";
    CHECK(lab("run-sgd " + kSmall + "--io.out_dir=" + (dir / "blocker" / "sub").string()).code == 3);

    const Outcome div = lab("run-sgd --dynamics.mode=general --dynamics.init.kind=uniform --model.alpha=1e6 "
                            "--dynamics.eps=1 --dynamics.T=50 --dynamics.schedule.c=1 --dynamics.N=4 --model.d=3" +
                            out);
    CHECK(div.code == 4);
    CHECK(div.err.find("step") != std::string::npos);
}

TEST_CASE("resolved config echo is stable and reproduces the run") {
    const fs::path dir = scratch("echo");
    std::ofstream(dir / "empty.json") << "{}";
    const std::string out = " --io.out_dir=" + (dir / "run").string();
    REQUIRE(lab("run-sgd --config " + (dir / "empty.json").string() + out).code == 0);
    const std::string first = slurp(dir / "run" / "config.json");
    const std::string traj = slurp(dir / "run" / "trajectory.csv");
    REQUIRE(lab("run-sgd --config " + (dir / "empty.json").string() + out).code == 0);
    CHECK(slurp(dir / "run" / "config.json") == first);
    CHECK(slurp(dir / "run" / "trajectory.csv") == traj);
    REQUIRE(lab("run-sgd" + out).code == 0);
    CHECK(slurp(dir / "run" / "config.json") == first);

    fs::copy_file(dir / "run" / "config.json", dir / "echo.json");
    // the echoed out_dir points back at the same directory
    REQUIRE(lab("run-sgd --config " + (dir / "echo.json").string()).code == 0);
    CHECK(slurp(dir / "run" / "config.json") == first);
    CHECK(slurp(dir / "run" / "trajectory.csv") == traj);
}

TEST_CASE("snapshot cadence and the state round trip") {
    const fs::path dir = scratch("roundtrip");
    REQUIRE(lab("run-sgd " + kSmall + "--io.snapshot_every=10 --io.save_states=true --io.out_dir=" + dir.string())
                .code == 0);
    const CsvTable tr = read_csv(dir / "trajectory.csv");
    CHECK(tr.rows.size() == 50 / 10 + 1);
    CHECK(slurp(dir / "trajectory.csv").find('\r') == std::string::npos);

    const RunConfig c = parse_and_validate("run-sgd", dir / "config.json", {});
    AnisotropicGaussians data(c.count("model.d"), c.number("model.gamma"), c.number("model.delta"));
    const auto est = PopulationEstimator::monte_carlo(data, c.count("estimator.n_mc"), c.seed_value("seed"));
    TruncatedReluDot act(0.0, 1.0, 0.0, 1.0);
    const auto steps = tr.column("step");
    const auto risk = tr.column("risk_particles");
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const Eigen::MatrixXd theta =
            read_state(dir / "states" / ("step_" + std::to_string(static_cast<long long>(steps[k])) + ".csv"));
        CHECK(risk_particles(Ensemble(theta, CoefficientMode::Fixed), est, act) ==
              risk[k]);
    }
    CHECK(read_state(dir / "final_state.csv") ==
          read_state(dir / "states" / ("step_" + std::to_string(static_cast<long long>(steps.back())) + ".csv")));
}

TEST_CASE("CSV text round-trips doubles exactly") {
    const fs::path dir = scratch("csv");
    const std::vector<std::vector<double>> rows{{0.1, 1.0 / 3.0, -2.5e-300}, {1e300, -0.0, 123456789.123456789}};
    write_csv(dir / "t.csv", {"a", "b", "c"}, rows);
    const CsvTable t = read_csv(dir / "t.csv");
    CHECK(t.columns == std::vector<std::string>{"a", "b", "c"});
    CHECK(t.rows == rows);
    CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("byte-identical outputs for any worker count") {
    const fs::path dir = scratch("threads");
    const std::string args = "run-coupled " + kSmall +
                             "--dynamics.tau=0.1 --dynamics.lambda=0.1 --dynamics.mode=general "
                             "--dynamics.init.kind=uniform --dynamics.kinds=[\\\"noisy-sgd\\\",\\\"noisy-gd\\\","
                             "\\\"langevin-pd\\\"] --study.eps_grid=[0.02,0.01] --io.out_dir=";
    REQUIRE(lab(args + (dir / "t1").string(), "MEANFIELD_LAB_THREADS=1").code == 0);
    REQUIRE(lab(args + (dir / "t4").string(), "MEANFIELD_LAB_THREADS=4").code == 0);
    for (const auto& f : fs::directory_iterator(dir / "t1")) {
        if (f.path().extension() != ".csv") continue;
        CAPTURE(f.path().filename().string());
        CHECK(slurp(f.path()) == slurp(dir / "t4" / f.path().filename()));
    }
}
