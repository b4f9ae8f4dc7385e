/*
 * pendepth - Pose and expression normalization of facial depth images.
 *
 * Copyright 2026 The pendepth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#ifndef PEN_EXTERNAL_HPP_
#define PEN_EXTERNAL_HPP_

#include "pen/error.hpp"
#include "pen/estimate.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <fcntl.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace pen {

namespace detail {

/// Single-quotes \p s for /bin/sh.
inline std::string shell_quote(const std::string& s)
{
    std::string out = "'";
    for (const char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    return out + "'";
}

/**
 * Runs \p command through /bin/sh in its own process group with stdout and
 * stderr appended to \p log. Returns the exit status; throws
 * ExternalTimeoutError (after killing the group) when \p timeout elapses.
 */
inline int run_shell(const std::string& command, const std::filesystem::path& log, std::chrono::milliseconds timeout)
{
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw ExternalCommandError("cannot open " + log.string());
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(fd);
        throw ExternalCommandError("fork failed");
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        const int null_in = ::open("/dev/null", O_RDONLY);
        if (null_in >= 0) {
            ::dup2(null_in, STDIN_FILENO);
        }
        ::dup2(fd, STDOUT_FILENO);
        ::dup2(fd, STDERR_FILENO);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(fd);
    ::setpgid(pid, pid); // also done in the child; whichever runs first wins

    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto pause = std::chrono::milliseconds(1);
    int status = 0;
    for (;;) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) {
            break;
        }
        if (r < 0 && errno != EINTR) {
            throw ExternalCommandError("waitpid failed");
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw ExternalTimeoutError("external estimator exceeded " + std::to_string(timeout.count()) + " ms");
        }
        std::this_thread::sleep_for(pause);
        pause = std::min(pause * 2, std::chrono::milliseconds(50));
    }
    if (WIFEXITED(status)) {
        return WEXITSTATUS(status);
    }
    return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

inline std::mutex& exchange_dir_mutex(const std::filesystem::path& dir)
{
    static std::mutex registry_mutex;
    static std::map<std::string, std::unique_ptr<std::mutex>> registry;
    const std::lock_guard lock(registry_mutex);
    auto& m = registry[std::filesystem::weakly_canonical(dir).string()];
    if (!m) {
        m = std::make_unique<std::mutex>();
    }
    return *m;
}

} /* namespace detail */

/**
 * Delegates estimation to an external program through files in an exchange
 * directory. Before the call the directory holds input.pgm (depth), and
 * when available input.ppm (HHA) and landmarks.txt ("u v depth" per line).
 * The command runs through /bin/sh; every "{dir}" in it is replaced by the
 * quoted directory path, and if there is none the path is appended as the
 * last argument. The program must write params.txt: pose (7), shape (K) and
 * expression (L) values, one per line. Its output goes to command.log.
 * Calls sharing a directory are serialised.
 */
class ExternalEstimator final : public Estimator
{
public:
    ExternalEstimator(std::string command, std::filesystem::path exchange_dir,
                      std::chrono::milliseconds timeout = std::chrono::seconds(60))
        : command_(std::move(command)), dir_(std::move(exchange_dir)), timeout_(timeout)
    {
        if (command_.empty()) {
            throw InvalidInput("external estimator command is empty");
        }
        if (timeout_.count() <= 0) {
            throw InvalidInput("external estimator timeout must be positive");
        }
    }

    std::string name() const override { return "external:" + command_; }

    EstimatorOutput estimate(const EstimatorInput& input, const MorphableModel& model) const override
    {
        input.validate(model);
        const std::lock_guard lock(detail::exchange_dir_mutex(dir_));
        std::filesystem::create_directories(dir_);
        const auto params_path = dir_ / "params.txt";
        std::filesystem::remove(params_path);
        std::filesystem::remove(dir_ / "input.ppm");
        std::filesystem::remove(dir_ / "landmarks.txt");
        write_depth(input.depth, dir_ / "input.pgm");
        if (input.hha) {
            write_hha(*input.hha, dir_ / "input.ppm");
        }
        if (input.landmarks) {
            write_landmarks(*input.landmarks, dir_ / "landmarks.txt");
        }

        const std::string quoted = detail::shell_quote(dir_.string());
        std::string cmd = command_;
        if (cmd.find("{dir}") == std::string::npos) {
            cmd += " " + quoted;
        } else {
            for (auto pos = cmd.find("{dir}"); pos != std::string::npos; pos = cmd.find("{dir}", pos + quoted.size())) {
                cmd.replace(pos, 5, quoted);
            }
        }
        const int status = detail::run_shell(cmd, dir_ / "command.log", timeout_);
        if (status != 0) {
            throw ExternalCommandError("external estimator exited with status " + std::to_string(status) +
                                       " (see " + (dir_ / "command.log").string() + ")");
        }
        if (!std::filesystem::exists(params_path)) {
            throw ExternalCommandError("external estimator did not write " + params_path.string());
        }
        EstimatorOutput out;
        out.params = parse_params(read_file(params_path), model.num_shape(), model.num_expression());
        out.converged = true;
        return out;
    }

private:
    std::string command_;
    std::filesystem::path dir_;
    std::chrono::milliseconds timeout_;
};

} /* namespace pen */

#endif /* PEN_EXTERNAL_HPP_ */
