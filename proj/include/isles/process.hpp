#ifndef ISLES_PROCESS_HPP
#define ISLES_PROCESS_HPP

// Minimal POSIX subprocess runner: argv exec (no shell), combined
// stdout/stderr captured to a file, wall-clock timeout.

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "isles/error.hpp"

namespace isles::process {

struct ProcessResult {
    int exit_code = -1;
    bool timed_out = false;
    bool signaled = false;
    std::string output;
};

/// RAII temporary directory, removed recursively on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& prefix = "isles") {
        auto base = std::filesystem::temp_directory_path() / (prefix + "-XXXXXX");
        std::string tmpl = base.string();
        if (::mkdtemp(tmpl.data()) == nullptr)
            fail(ErrorKind::IoFailure, "cannot create temporary directory");
        path_ = tmpl;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

inline ProcessResult run(const std::vector<std::string>& argv, std::chrono::milliseconds timeout,
                         const std::filesystem::path& log_path) {
    if (argv.empty()) fail(ErrorKind::InvalidArgument, "empty command");
    std::vector<char*> cargv;
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    const std::string exec_failed = "exec failed: " + argv[0] + "\n";
    const int log_fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0600);
    if (log_fd < 0) fail(ErrorKind::IoFailure, "cannot open " + log_path.string());

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(log_fd);
        fail(ErrorKind::ToolFailure, "fork failed");
    }
    if (pid == 0) {
        ::dup2(log_fd, STDOUT_FILENO);
        ::dup2(log_fd, STDERR_FILENO);
        const int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
        ::execvp(cargv[0], cargv.data());
        [[maybe_unused]] auto n = ::write(STDERR_FILENO, exec_failed.data(), exec_failed.size());
        ::_exit(127);
    }
    ::close(log_fd);

    ProcessResult result;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    int status = 0;
    for (;;) {
        const pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (done < 0) fail(ErrorKind::ToolFailure, "waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!result.timed_out) {
        if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
        else if (WIFSIGNALED(status)) result.signaled = true;
    }
    std::ifstream log(log_path);
    std::ostringstream ss;
    ss << log.rdbuf();
    result.output = ss.str();
    return result;
}

} // namespace isles::process

#endif
