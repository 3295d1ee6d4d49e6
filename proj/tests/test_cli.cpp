#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "lmtrace/service.hpp"

using namespace lmtrace;
using namespace lmtrace::testing;
namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

int cli(const std::string& args) {
    const std::string cmd = quote(LMTRACE_CLI_PATH) + " " + args + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        write_model_dir(dir_.path() / "toy", random_params(toy_config(2, 2, 16, toy_vocab_size()), 5));
        std::ofstream(config()) << R"({"max_user_string_length": 40, "models": {"toy": "toy"}})";
        std::ofstream(dir_.path() / "prompts.txt") << "the cat\nin the hat\nHello\n";
    }
    std::string config() const { return (dir_.path() / "config.json").string(); }
    std::string out(const std::string& name) const { return (dir_.path() / name).string(); }
    TempDir dir_;
};

}  // namespace

TEST_F(CliTest, FullGraphAtZeroThreshold) {
    ASSERT_EQ(cli("analyze --config " + quote(config()) + " --text Hello --format graph --threshold 0 --out " +
                  quote(out("a"))),
              0);
    const auto produced = files(out("a"));
    ASSERT_EQ(produced.size(), 1u);
    EXPECT_EQ(produced[0].filename().string().substr(0, 4), "000_");
    const auto doc = ojson::parse(slurp(produced[0]));
    const std::size_t T = 5, L = 2, t = T - 1;
    EXPECT_EQ(doc["edges"].size(), (t + 4) + (L - 1) * (t + 1) * (t + 8) / 2);
}

TEST_F(CliTest, OneDocumentPerPromptAndFormat) {
    ASSERT_EQ(cli("analyze --config " + quote(config()) + " --file " + quote(out("prompts.txt")) +
                  " --format lens --out " + quote(out("b"))),
              0);
    EXPECT_EQ(files(out("b")).size(), 3u);
    ASSERT_EQ(cli("analyze --config " + quote(config()) + " --file " + quote(out("prompts.txt")) +
                  " --format lens --format heads --format neurons --format dot --format graph --out " +
                  quote(out("c"))),
              0);
    EXPECT_EQ(files(out("c")).size(), 15u);
}

TEST_F(CliTest, DeterministicAndEqualToServicePayloads) {
    const std::string args = "analyze --config " + quote(config()) +
                             " --model toy --text 'in the hat' --threshold 0.05 --targets all --k 4 --apply-ln false"
                             " --format graph --format lens --format heads --format neurons --format dot --out ";
    ASSERT_EQ(cli(args + quote(out("d1"))), 0);
    ASSERT_EQ(cli(args + quote(out("d2"))), 0);
    const auto a = files(out("d1")), b = files(out("d2"));
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].filename(), b[i].filename());
        EXPECT_EQ(slurp(a[i]), slurp(b[i]));
    }

    Service s(load_service_config(config()));
    const auto created = s.handle("POST", "/runs", {}, R"({"model": "toy", "text": "in the hat"})");
    ASSERT_EQ(created.status, 200);
    const std::string id = ojson::parse(created.body)["run_id"];
    const std::size_t T = ojson::parse(created.body)["tokens"].size();
    auto get = [&](const std::string& what, Service::Query q) {
        return s.handle("GET", "/runs/" + id + "/" + what, q, "").body;
    };
    auto find = [&](const std::string& suffix) {
        for (const auto& p : a) {
            const std::string n = p.filename().string();
            if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) return p;
        }
        return fs::path();
    };

    EXPECT_EQ(slurp(find(".graph.json")), get("graph", {{"threshold", "0.05"}, {"targets", "all"}}));

    const auto lens = ojson::parse(slurp(find(".lens.json")));
    ASSERT_EQ(lens.size(), T * 5);  // embed + 2 layers x (mid, post), per target
    for (const auto& entry : lens) {
        Service::Query q{{"layer", std::to_string(entry["layer"].get<std::size_t>())},
                         {"point", entry["point"].get<std::string>()},
                         {"position", std::to_string(entry["position"].get<std::size_t>())},
                         {"k", "4"},
                         {"apply_ln", "false"}};
        EXPECT_EQ(dump_document(entry), get("lens", q));
    }
    const auto heads = ojson::parse(slurp(find(".heads.json")));
    ASSERT_EQ(heads.size(), 2 * T);
    for (const auto& entry : heads) {
        EXPECT_EQ(dump_document(entry),
                  get("heads", {{"layer", std::to_string(entry["layer"].get<std::size_t>())},
                                {"position", std::to_string(entry["position"].get<std::size_t>())}}));
    }
    const auto neurons = ojson::parse(slurp(find(".neurons.json")));
    for (const auto& entry : neurons) {
        EXPECT_EQ(dump_document(entry),
                  get("neurons", {{"layer", std::to_string(entry["layer"].get<std::size_t>())},
                                  {"position", std::to_string(entry["position"].get<std::size_t>())},
                                  {"k", "4"}}));
    }
    const auto graph = ojson::parse(slurp(find(".graph.json")));
    EXPECT_EQ(slurp(find(".dot")), graph_to_dot(parse_graph(graph), [&] {
                  std::vector<std::string> toks;
                  const ojson run = ojson::parse(created.body);
                  for (const auto& t : run["tokens"]) toks.push_back(t["text"].get<std::string>());
                  return toks;
              }()));
}

TEST_F(CliTest, ExitCodes) {
    const std::string base = "analyze --config " + quote(config()) + " --out " + quote(out("e"));
    EXPECT_EQ(cli(""), 2);
    EXPECT_EQ(cli("analyze --text hi --format graph"), 2);
    EXPECT_EQ(cli(base + " --text hi --format pie"), 2);
    EXPECT_EQ(cli(base + " --text hi --format graph --threshold 2"), 2);
    EXPECT_EQ(cli(base + " --text hi --file " + quote(out("prompts.txt")) + " --format graph"), 2);
    EXPECT_EQ(cli(base + " --model nope --text hi --format graph"), 2);
    EXPECT_EQ(cli(base + " --text hi --format graph --targets 7"), 2);
    EXPECT_EQ(cli(base + " --text " + std::string(41, 'a') + " --format graph"), 4);

    std::ofstream(out("bad.json")) << R"({"max_user_string_length": 40, "models": {"toy": "nowhere"}})";
    EXPECT_EQ(cli("analyze --config " + quote(out("bad.json")) + " --text hi --format graph --out " + quote(out("f"))),
              3);
    EXPECT_EQ(cli("analyze --help"), 0);
}
