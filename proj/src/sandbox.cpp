// SPDX-License-Identifier: Apache-2.0
#include "kdr/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>

#include "kdr/error.hpp"
#include "kdr/text_util.hpp"

namespace fs = std::filesystem;

namespace kdr {

namespace {

// Executed as the interpreter's main program; argv = runner, script, workdir, scratch.
constexpr std::string_view kRunner = R"PY(import sys, os, builtins, inspect, traceback, __future__
from typing import List, Optional, Any

_script, _workdir, _scratch = sys.argv[1], os.path.realpath(sys.argv[2]), os.path.realpath(sys.argv[3])
sys.argv = ["script.py"]
sys.path.insert(0, _workdir)

text = str
number = float
date = str


def _init_for(sig):
    params = [p for n, p in sig.parameters.items() if n != "self"]

    def __init__(self, *args, **kwargs):
        bound = sig.bind_partial(self, *args, **kwargs)
        for p in params:
            if p.name in bound.arguments:
                value = bound.arguments[p.name]
            else:
                ann = p.annotation if isinstance(p.annotation, str) else ""
                value = [] if ann.startswith("List[") else None
            setattr(self, p.name, value)

    return __init__


class _Knowledge:
    _identity = "name"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        init = cls.__dict__.get("__init__")
        if init is not None:
            cls.__init__ = _init_for(inspect.signature(init))

    def __repr__(self):
        return type(self).__name__ + "(" + repr(getattr(self, self._identity, None)) + ")"

    def __str__(self):
        return str(getattr(self, self._identity, ""))


class Entity(_Knowledge):
    _identity = "name"

    def __init__(self, name: text): ...


class Event(_Knowledge):
    _identity = "trigger"

    def __init__(self, trigger: text): ...


_roots = (_workdir, _scratch)
_WRITE = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND
_BLOCKED = {
    "socket.connect", "socket.bind", "socket.getaddrinfo", "socket.gethostbyname", "socket.gethostbyaddr",
    "socket.sendto", "socket.sendmsg", "subprocess.Popen", "os.system", "os.exec", "os.posix_spawn",
    "os.spawn", "os.fork", "os.forkpty", "os.kill", "os.killpg", "pty.spawn",
}
_MUTATING = {
    "os.remove", "os.rename", "os.rmdir", "os.mkdir", "os.chmod", "os.chown", "os.truncate", "os.symlink",
    "os.link", "os.utime", "shutil.rmtree", "shutil.copyfile", "shutil.copymode", "shutil.copystat", "shutil.move",
}


def _inside(path):
    try:
        p = os.path.realpath(os.fsdecode(path))
    except Exception:
        return False
    return any(p == r or p.startswith(r + os.sep) for r in _roots)


def _guard(event, args):
    if event in _BLOCKED:
        raise PermissionError("sandbox: " + event + " is not permitted")
    if event == "open":
        path, mode, flags = args
        if isinstance(path, int) or path is None:
            return
        writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
            isinstance(flags, int) and flags & _WRITE)
        if writing and not _inside(path):
            raise PermissionError("sandbox: writing outside the working directory: " + os.fsdecode(path))
    elif event in _MUTATING:
        for a in args[:2]:
            if isinstance(a, (str, bytes, os.PathLike)) and not _inside(a):
                raise PermissionError("sandbox: " + event + " outside the working directory")


with open(_script, "r", encoding="utf-8") as f:
    _source = f.read()
_code = compile(_source, "script.py", "exec", flags=__future__.annotations.compiler_flag, dont_inherit=True)
_globals = {
    "__name__": "__main__", "__builtins__": builtins, "Entity": Entity, "Event": Event, "List": List,
    "Optional": Optional, "Any": Any, "text": text, "number": number, "date": date,
}
sys.addaudithook(_guard)
try:
    exec(_code, _globals)
except SystemExit:
    raise
except BaseException as e:
    tb = e.__traceback__.tb_next if e.__traceback__ is not None else None
    traceback.print_exception(type(e), e, tb)
    sys.stderr.flush()
    sys.exit(1)
)PY";

std::string find_in_path(const std::string& program) {
    if (program.find('/') != std::string::npos) return access(program.c_str(), X_OK) == 0 ? program : "";
    const char* path = std::getenv("PATH");
    for (const auto& dir : text::split(path ? path : "/usr/local/bin:/usr/bin:/bin", ':')) {
        if (dir.empty()) continue;
        std::string candidate = dir + "/" + program;
        if (access(candidate.c_str(), X_OK) == 0) return candidate;
    }
    return "";
}

struct Capture {
    std::string data;
    bool truncated = false;
    bool open = true;
};

void drain(int fd, Capture& cap, std::size_t limit) {
    char buf[8192];
    ssize_t n = read(fd, buf, sizeof buf);
    if (n <= 0) {
        if (n == 0 || (errno != EINTR && errno != EAGAIN)) cap.open = false;
        return;
    }
    const std::size_t room = limit > cap.data.size() ? limit - cap.data.size() : 0;
    const std::size_t take = std::min(room, static_cast<std::size_t>(n));
    cap.data.append(buf, take);
    if (take < static_cast<std::size_t>(n)) cap.truncated = true;
}

} // namespace

std::string_view exit_status_name(ExitStatus s) noexcept {
    switch (s) {
    case ExitStatus::ok: return "ok";
    case ExitStatus::error: return "error";
    case ExitStatus::timeout: return "timeout";
    }
    return "error";
}

ExitStatus parse_exit_status(std::string_view s) {
    if (s == "ok") return ExitStatus::ok;
    if (s == "error") return ExitStatus::error;
    if (s == "timeout") return ExitStatus::timeout;
    throw Error(Errc::schema_violation, "unknown exit status '" + std::string(s) + "'");
}

std::string guess_file_kind(std::string_view path) {
    const auto ext = text::to_lower(fs::path(std::string(path)).extension().string());
    for (const char* e : {".png", ".jpg", ".jpeg", ".svg", ".gif", ".pdf", ".webp", ".bmp"}) {
        if (ext == e) return "chart";
    }
    for (const char* e : {".csv", ".tsv", ".xlsx", ".xls", ".html", ".htm", ".md"}) {
        if (ext == e) return "table";
    }
    return "data";
}

ExecutionResult execute_script(const std::string& script, const SandboxLimits& limits, const std::string& workdir) {
    if (limits.wall_seconds <= 0) throw Error(Errc::precondition, "wall-clock limit must be positive");
    std::error_code ec;
    fs::create_directories(workdir, ec);
    if (ec || !fs::is_directory(workdir)) throw Error(Errc::io_failure, "cannot create working directory " + workdir);
    if (!fs::is_empty(workdir)) throw Error(Errc::precondition, "working directory is not empty: " + workdir);
    const std::string work_abs = fs::canonical(workdir).string();

    const std::string interpreter = find_in_path(limits.interpreter);
    if (interpreter.empty()) throw Error(Errc::sandbox_unavailable, "interpreter not found: " + limits.interpreter);

    std::string scratch_tmpl = (fs::temp_directory_path() / "kdr-sandbox-XXXXXX").string();
    if (!mkdtemp(scratch_tmpl.data())) throw Error(Errc::sandbox_unavailable, "cannot create scratch directory");
    const std::string scratch = scratch_tmpl;
    struct ScratchGuard {
        std::string dir;
        ~ScratchGuard() {
            std::error_code ignored;
            fs::remove_all(dir, ignored);
        }
    } guard{scratch};
    const std::string runner_path = scratch + "/runner.py";
    const std::string script_path = scratch + "/script.py";
    text::write_file(runner_path, kRunner);
    text::write_file(script_path, script);
    fs::create_directories(scratch + "/mpl");

    // Everything the child needs is prepared before fork.
    std::vector<std::string> args{interpreter, "-I", "-B", "-u", "-X", "utf8", runner_path, script_path, work_abs, scratch};
    std::vector<std::string> env{"PATH=/usr/local/bin:/usr/bin:/bin", "HOME=" + scratch, "TMPDIR=" + scratch,
                                 "MPLCONFIGDIR=" + scratch + "/mpl", "MPLBACKEND=Agg", "LANG=C.UTF-8",
                                 "OMP_NUM_THREADS=1", "OPENBLAS_NUM_THREADS=1"};
    std::vector<char*> argv, envp;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    for (auto& e : env) envp.push_back(e.data());
    envp.push_back(nullptr);
    const rlim_t cpu = static_cast<rlim_t>(limits.wall_seconds) + 2;

    int out_pipe[2], err_pipe[2], status_pipe[2];
    if (pipe2(out_pipe, O_CLOEXEC) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0 || pipe2(status_pipe, O_CLOEXEC) != 0) {
        throw Error(Errc::sandbox_unavailable, std::string("pipe: ") + std::strerror(errno));
    }

    const auto started = std::chrono::steady_clock::now();
    pid_t pid = fork();
    if (pid < 0) throw Error(Errc::sandbox_unavailable, std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
        setpgid(0, 0);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        int devnull = open("/dev/null", O_RDONLY);
        if (devnull >= 0) dup2(devnull, STDIN_FILENO);
        if (chdir(work_abs.c_str()) != 0) _exit(126);
        // Private network namespace: directly when privileged, else via a user namespace.
        if (unshare(CLONE_NEWNET) != 0) (void)unshare(CLONE_NEWUSER | CLONE_NEWNET);
        struct rlimit r;
        r.rlim_cur = r.rlim_max = cpu;
        setrlimit(RLIMIT_CPU, &r);
        r.rlim_cur = r.rlim_max = 256ull << 20;
        setrlimit(RLIMIT_FSIZE, &r);
        r.rlim_cur = r.rlim_max = 0;
        setrlimit(RLIMIT_CORE, &r);
        execve(argv[0], argv.data(), envp.data());
        int err = errno;
        ssize_t ignored = write(status_pipe[1], &err, sizeof err);
        (void)ignored;
        _exit(127);
    }
    setpgid(pid, pid);
    close(out_pipe[1]);
    close(err_pipe[1]);
    close(status_pipe[1]);

    int exec_errno = 0;
    ssize_t got = read(status_pipe[0], &exec_errno, sizeof exec_errno);
    close(status_pipe[0]);
    if (got == static_cast<ssize_t>(sizeof exec_errno)) {
        waitpid(pid, nullptr, 0);
        close(out_pipe[0]);
        close(err_pipe[0]);
        throw Error(Errc::sandbox_unavailable, "cannot start " + interpreter + ": " + std::strerror(exec_errno));
    }

    const auto deadline = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(limits.wall_seconds));
    Capture out, err;
    bool timed_out = false;
    while (out.open || err.open) {
        pollfd fds[2];
        nfds_t n = 0;
        int out_slot = -1, err_slot = -1;
        if (out.open) {
            out_slot = static_cast<int>(n);
            fds[n++] = {out_pipe[0], POLLIN, 0};
        }
        if (err.open) {
            err_slot = static_cast<int>(n);
            fds[n++] = {err_pipe[0], POLLIN, 0};
        }
        int wait_ms = 100;
        if (!timed_out) {
            auto remaining =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
            if (remaining <= 0) {
                timed_out = true;
                kill(-pid, SIGKILL);
                kill(pid, SIGKILL);
                continue;
            }
            wait_ms = static_cast<int>(std::min<long long>(remaining, 1000));
        }
        int rc = poll(fds, n, wait_ms);
        if (rc < 0 && errno != EINTR) break;
        if (rc <= 0) continue;
        if (out_slot >= 0 && fds[out_slot].revents) drain(out_pipe[0], out, limits.output_bytes);
        if (err_slot >= 0 && fds[err_slot].revents) drain(err_pipe[0], err, limits.output_bytes);
    }
    close(out_pipe[0]);
    close(err_pipe[0]);
    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    kill(-pid, SIGKILL); // stray descendants, if any
    const auto finished = std::chrono::steady_clock::now();

    ExecutionResult result;
    result.workdir = work_abs;
    result.wall_seconds = std::chrono::duration<double>(finished - started).count();
    result.stdout_text = std::move(out.data);
    result.stderr_text = std::move(err.data);
    result.stdout_truncated = out.truncated;
    result.stderr_truncated = err.truncated;
    if (timed_out) {
        result.exit_status = ExitStatus::timeout;
        result.exit_code = -SIGKILL;
        if (!result.stderr_text.empty() && result.stderr_text.back() != '\n') result.stderr_text += '\n';
        result.stderr_text += "timed out after " + text::format_number(limits.wall_seconds) + " s\n";
    } else if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
        result.exit_status = result.exit_code == 0 ? ExitStatus::ok : ExitStatus::error;
    } else {
        result.exit_code = WIFSIGNALED(status) ? -WTERMSIG(status) : -1;
        result.exit_status = ExitStatus::error;
        if (WIFSIGNALED(status) && WTERMSIG(status) == SIGXCPU) result.exit_status = ExitStatus::timeout;
    }

    for (auto it = fs::recursive_directory_iterator(work_abs, fs::directory_options::skip_permission_denied, ec);
         !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (!it->is_regular_file()) continue;
        const auto rel = fs::relative(it->path(), work_abs).generic_string();
        result.produced_files.push_back({rel, guess_file_kind(rel), it->file_size()});
    }
    std::sort(result.produced_files.begin(), result.produced_files.end(),
              [](const ProducedFile& a, const ProducedFile& b) { return a.path < b.path; });
    return result;
}

nlohmann::ordered_json execution_result_to_json(const ExecutionResult& r) {
    nlohmann::ordered_json j;
    j["exit_status"] = exit_status_name(r.exit_status);
    j["exit_code"] = r.exit_code;
    j["stdout"] = r.stdout_text;
    j["stderr"] = r.stderr_text;
    j["stdout_truncated"] = r.stdout_truncated;
    j["stderr_truncated"] = r.stderr_truncated;
    j["produced_files"] = nlohmann::ordered_json::array();
    for (const auto& f : r.produced_files) {
        j["produced_files"].push_back({{"path", f.path}, {"kind", f.kind}, {"size", f.size}});
    }
    return j;
}

ExecutionResult execution_result_from_json(const nlohmann::json& j) {
    ExecutionResult r;
    try {
        r.exit_status = parse_exit_status(j.at("exit_status").get<std::string>());
        r.exit_code = j.value("exit_code", -1);
        r.stdout_text = j.value("stdout", std::string{});
        r.stderr_text = j.value("stderr", std::string{});
        r.stdout_truncated = j.value("stdout_truncated", false);
        r.stderr_truncated = j.value("stderr_truncated", false);
        for (const auto& f : j.value("produced_files", nlohmann::json::array())) {
            r.produced_files.push_back(
                {f.at("path").get<std::string>(), f.at("kind").get<std::string>(), f.value("size", std::uintmax_t{0})});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_violation, std::string("execution result: ") + e.what());
    }
    return r;
}

} // namespace kdr
