// SPDX-License-Identifier: Apache-2.0
#include "kdr/sandbox.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "kdr/error.hpp"
#include "kdr/text_util.hpp"

using namespace kdr;
namespace fs = std::filesystem;

namespace {

class SandboxTest : public ::testing::Test {
protected:
    void SetUp() override {
        std::string tmpl = (fs::temp_directory_path() / "kdr-sbx-test-XXXXXX").string();
        ASSERT_NE(mkdtemp(tmpl.data()), nullptr);
        root_ = tmpl;
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string fresh(const std::string& name) { return (fs::path(root_) / name).string(); }

    ExecutionResult run(const std::string& script, double wall = 20) {
        SandboxLimits limits;
        limits.wall_seconds = wall;
        return execute_script(script, limits, fresh("w" + std::to_string(counter_++)));
    }

    std::string root_;
    int counter_ = 0;
};

} // namespace

TEST_F(SandboxTest, PrintsToStdout) {
    auto r = run("print(42)\n");
    EXPECT_EQ(r.exit_status, ExitStatus::ok);
    EXPECT_EQ(r.stdout_text, "42\n");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_TRUE(r.produced_files.empty());
}

TEST_F(SandboxTest, ExceptionIsErrorWithTraceback) {
    auto r = run("x = 1\nraise ValueError('boom')\n");
    EXPECT_EQ(r.exit_status, ExitStatus::error);
    EXPECT_NE(r.stderr_text.find("ValueError: boom"), std::string::npos);
    EXPECT_NE(r.stderr_text.find("script.py"), std::string::npos);
}

TEST_F(SandboxTest, TimeoutKillsAtLimit) {
    auto r = run("while True:\n    pass\n", 1.5);
    EXPECT_EQ(r.exit_status, ExitStatus::timeout);
    EXPECT_GE(r.wall_seconds, 1.5);
    EXPECT_LT(r.wall_seconds, 4.0);
}

TEST_F(SandboxTest, ProducedFilesAreCatalogued) {
    auto r = run("open('chart.png', 'wb').write(b'\\x89PNG....')\nopen('out.csv', 'w').write('a,b\\n')\n"
                 "import os\nos.makedirs('sub', exist_ok=True)\nopen('sub/raw.bin', 'wb').write(b'1')\n");
    ASSERT_EQ(r.exit_status, ExitStatus::ok) << r.stderr_text;
    ASSERT_EQ(r.produced_files.size(), 3u);
    EXPECT_EQ(r.produced_files[0], (ProducedFile{"chart.png", "chart", 8}));
    EXPECT_EQ(r.produced_files[1], (ProducedFile{"out.csv", "table", 4}));
    EXPECT_EQ(r.produced_files[2], (ProducedFile{"sub/raw.bin", "data", 1}));
}

TEST_F(SandboxTest, NetworkIsBlocked) {
    auto r = run("import socket\ns = socket.socket()\ns.settimeout(2)\ns.connect(('127.0.0.1', 9))\n");
    EXPECT_EQ(r.exit_status, ExitStatus::error);
    auto r2 = run("import urllib.request\nurllib.request.urlopen('http://example.com', timeout=2)\n");
    EXPECT_EQ(r2.exit_status, ExitStatus::error);
}

TEST_F(SandboxTest, WritesOutsideWorkdirAreBlocked) {
    const auto outside = fresh("outside.txt");
    text::write_file(outside, "keep");
    auto r = run("open(" + text::quote(outside) + ", 'w').write('x')\n");
    EXPECT_EQ(r.exit_status, ExitStatus::error);
    EXPECT_NE(r.stderr_text.find("PermissionError"), std::string::npos);
    auto r2 = run("import os\nos.remove(" + text::quote(outside) + ")\n");
    EXPECT_EQ(r2.exit_status, ExitStatus::error);
    auto r3 = run("import subprocess\nsubprocess.run(['rm', " + text::quote(outside) + "])\n");
    EXPECT_EQ(r3.exit_status, ExitStatus::error);
    EXPECT_EQ(text::read_file(outside), "keep");
}

TEST_F(SandboxTest, ReadingIsAllowed) {
    auto r = run("import json, math\nprint(json.dumps({'a': math.floor(2.5)}))\n");
    EXPECT_EQ(r.stdout_text, "{\"a\": 2}\n");
}

TEST_F(SandboxTest, OutputIsTruncatedAtByteLimit) {
    SandboxLimits limits;
    limits.output_bytes = 100;
    auto r = execute_script("print('x' * 5000)\n", limits, fresh("trunc"));
    EXPECT_EQ(r.exit_status, ExitStatus::ok);
    EXPECT_EQ(r.stdout_text.size(), 100u);
    EXPECT_TRUE(r.stdout_truncated);
}

TEST_F(SandboxTest, Preconditions) {
    const auto dir = fresh("busy");
    fs::create_directories(dir);
    text::write_file(dir + "/f", "x");
    try {
        execute_script("print(1)", {}, dir);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::precondition);
    }
    SandboxLimits bad;
    bad.interpreter = "kdr-no-such-python";
    try {
        execute_script("print(1)", bad, fresh("noint"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::sandbox_unavailable);
    }
}

TEST_F(SandboxTest, KnowledgeRuntimeBindsConstructorArguments) {
    const std::string script = R"(class Person(Entity):
    """A person."""
    def __init__(self, name: text, affiliation: text, knows: List[Person]): ...

class Scientist(Person):
    def __init__(self, name: text, affiliation: text, knows: List[Person], field: text): ...

o0 = Person(name="Ada")
o1 = Scientist(name="Curie", knows=[o0], field="physics")
search_results = [o0, o1]
print(len(search_results))
print(o1.knows[0].name, o0.affiliation, o0.knows, o1.field, str(o1), repr(o0))
)";
    auto r = run(script);
    ASSERT_EQ(r.exit_status, ExitStatus::ok) << r.stderr_text;
    EXPECT_EQ(r.stdout_text, "2\nAda None [] physics Curie Person('Ada')\n");
}

TEST_F(SandboxTest, ResultJsonRoundTrip) {
    auto r = run("print('hi')\nopen('a.png','wb').write(b'1')\n");
    auto back = execution_result_from_json(execution_result_to_json(r));
    EXPECT_EQ(back.exit_status, r.exit_status);
    EXPECT_EQ(back.stdout_text, r.stdout_text);
    EXPECT_EQ(back.produced_files, r.produced_files);
}

TEST(SandboxKinds, GuessFileKind) {
    EXPECT_EQ(guess_file_kind("a/b/Chart.PNG"), "chart");
    EXPECT_EQ(guess_file_kind("x.svg"), "chart");
    EXPECT_EQ(guess_file_kind("t.csv"), "table");
    EXPECT_EQ(guess_file_kind("blob"), "data");
}
