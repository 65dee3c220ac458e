#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ubiquity/cli.hpp"

using namespace ubiquity;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("ubiquity_cli_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Run {
    int code;
    std::string out, err;
    fs::path dir;
};

Run run(const std::string& command, cli::ExperimentConfig c, const std::string& name)
{
    c.out = scratch(name).string();
    std::ostringstream out, err;
    const int code = cli::run(command, c, out, err);
    return {code, out.str(), err.str(), c.out};
}

cli::ExperimentConfig small_config()
{
    cli::ExperimentConfig c;
    c.sequence.count = 2000;
    c.level_lo = 5;
    c.level_hi = 8;
    c.cantor.depth = 2;
    c.cantor.rho_samples = 200;
    c.sampled_paths = 64;
    c.certificate.samples = 300;
    c.coverage_level = 6;
    c.threads = 1;
    return c;
}

double manifest_s(const Run& r) { return nlohmann::json::parse(slurp(r.dir / "manifest.json")).at("s_value").get<double>(); }

}  // namespace

TEST(Config, RoundTripAndDefaults)
{
    auto c = small_config();
    c.measure = MeasureSpec::bernoulli({0.25, 0.75});
    c.profile = ShrinkProfile({1.5});
    c.sweep_profiles = {ShrinkProfile({1.0}), ShrinkProfile({2.0})};
    c.cantor.schedule.eps0 = 0.15;
    const nlohmann::json j = c;
    const auto back = j.get<cli::ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(back.sweep_profiles.size(), 2u);

    const auto empty = nlohmann::json::object().get<cli::ExperimentConfig>();
    EXPECT_EQ(empty.profile, ShrinkProfile({1.0, 2.0}));
    EXPECT_EQ(empty.measure.d, 2);
}

TEST(Config, SchemaRejections)
{
    EXPECT_THROW((nlohmann::json{{"colour", 1}}.get<cli::ExperimentConfig>()), InvalidArgument);
    EXPECT_THROW((nlohmann::json{{"cantor", {{"depht", 2}}}}.get<cli::ExperimentConfig>()), InvalidArgument);
    EXPECT_THROW((nlohmann::json{{"schema_version", 9}}.get<cli::ExperimentConfig>()), InvalidArgument);
    EXPECT_THROW((nlohmann::json{{"boxcount", {{"levels", {1, 2, 3}}}}}.get<cli::ExperimentConfig>()), InvalidArgument);
    EXPECT_THROW(cli::parse_levels("6-12"), InvalidArgument);
    EXPECT_THROW(cli::parse_levels("a..b"), InvalidArgument);
    EXPECT_EQ(cli::parse_levels("6..12"), (std::pair<int, int>{6, 12}));
}

TEST(Config, OverridesTakePrecedence)
{
    auto c = small_config();
    cli::Overrides o;
    o.seed = 99;
    o.levels = {{4, 9}};
    o.depth = 3;
    o.cell_budget = 1000;
    cli::apply(c, o);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_EQ(c.level_lo, 4);
    EXPECT_EQ(c.level_hi, 9);
    EXPECT_EQ(c.cantor.depth, 3);
    EXPECT_EQ(c.cell_budget, 1000);
}

TEST(Formula, ReportsAndEmbedsS)
{
    const auto r = run("formula", small_config(), "formula");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("s = 1.5"), std::string::npos);
    EXPECT_NE(r.out.find("argmin k = 2"), std::string::npos);
    EXPECT_DOUBLE_EQ(manifest_s(r), 1.5);
    const auto csv = slurp(r.dir / "results.csv");
    EXPECT_EQ(csv.rfind("v,f_v,s\n", 0), 0u);
    EXPECT_NE(csv.find("\n2,1.5,1.5\n"), std::string::npos);  // f(tau_d) = s here
}

TEST(Formula, SpecialCases)
{
    auto c = small_config();
    c.profile = ShrinkProfile({3.0, 3.0});
    EXPECT_NEAR(manifest_s(run("formula", c, "iso")), 2.0 / 3.0, 1e-15);
    c.measure = MeasureSpec::lebesgue(1);
    c.profile = ShrinkProfile({1.0});
    EXPECT_DOUBLE_EQ(manifest_s(run("formula", c, "one")), 1.0);
}

TEST(Errors, ExitCodes)
{
    auto c = small_config();
    c.sequence.kind = SequenceKind::ExplicitList;
    auto r = run("boxcount", c, "empty");
    EXPECT_EQ(r.code, cli::kInvalid);
    EXPECT_NE(r.err.find("empty"), std::string::npos);

    c = small_config();
    c.level_lo = 9;
    c.level_hi = 3;
    EXPECT_EQ(run("boxcount", c, "levels").code, cli::kInvalid);
    EXPECT_EQ(run("nonsense", small_config(), "nonsense").code, cli::kInvalid);

    c = small_config();
    c.cell_budget = 100;
    r = run("boxcount", c, "budget");
    EXPECT_EQ(r.code, cli::kBudget);
    const auto m = nlohmann::json::parse(slurp(r.dir / "manifest.json"));
    EXPECT_EQ(m.at("exit_code").get<int>(), cli::kBudget);
    EXPECT_EQ(m.at("failure").at("kind").get<std::string>(), "budget");
}

TEST(Commands, ArtifactsPresent)
{
    const auto c = small_config();
    for (const auto& cmd : cli::command_names()) {
        const auto r = run(cmd, c, "artifacts_" + cmd);
        EXPECT_TRUE(r.code == 0 || r.code == cli::kCertificateFailed) << cmd << ": " << r.err;
        EXPECT_TRUE(fs::exists(r.dir / "manifest.json")) << cmd;
        EXPECT_TRUE(fs::exists(r.dir / "results.csv")) << cmd;
        EXPECT_TRUE(fs::exists(r.dir / "plot.svg")) << cmd;
        const bool tree = cmd == "cantor" || cmd == "certify";
        EXPECT_EQ(fs::exists(r.dir / "tree.jsonl"), tree) << cmd;
        const auto m = nlohmann::json::parse(slurp(r.dir / "manifest.json"));
        EXPECT_EQ(m.at("command").get<std::string>(), cmd);
        EXPECT_EQ(m.at("config_hash").get<std::string>().size(), 16u);
        EXPECT_TRUE(m.contains("s_value"));
        // every CSV carries s
        const auto csv = slurp(r.dir / "results.csv");
        EXPECT_NE(csv.substr(0, csv.find('\n')).find(",s"), std::string::npos) << cmd;
    }
}

TEST(Commands, CertifyExitMatchesReport)
{
    auto c = small_config();
    c.profile = ShrinkProfile({1.0, 1.0});
    const auto r = run("certify", c, "certify_iso");
    const auto cert = nlohmann::json::parse(slurp(r.dir / "certificate.json"));
    const auto m = nlohmann::json::parse(slurp(r.dir / "manifest.json"));
    EXPECT_TRUE(m.at("measured").at("audit").at("pass").get<bool>());
    EXPECT_EQ(r.code == 0, cert.at("pass").get<bool>());
    EXPECT_DOUBLE_EQ(cert.at("s").get<double>(), 2.0);
}

TEST(Determinism, RerunsAreByteIdentical)
{
    auto c = small_config();
    for (const auto& cmd : cli::command_names()) {
        c.threads = 1;
        const auto a = run(cmd, c, "det_a_" + cmd);
        c.threads = 4;
        const auto b = run(cmd, c, "det_b_" + cmd);
        ASSERT_EQ(a.code, b.code) << cmd;
        for (const char* f : {"results.csv", "plot.svg", "tree.jsonl", "certificate.json"}) {
            if (!fs::exists(a.dir / f)) continue;
            EXPECT_EQ(slurp(a.dir / f), slurp(b.dir / f)) << cmd << " " << f;
        }
        auto ma = nlohmann::json::parse(slurp(a.dir / "manifest.json"));
        auto mb = nlohmann::json::parse(slurp(b.dir / "manifest.json"));
        for (auto* m : {&ma, &mb}) {
            m->erase("created");
            (*m)["config"].erase("out");
            (*m)["config"].erase("threads");
            m->erase("config_hash");
        }
        EXPECT_EQ(ma, mb) << cmd;
    }
}
