#include "wsforge/script_runner.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

extern char** environ;

namespace wsforge {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

void RunnerRegistry::add(std::string runtime_id, std::vector<std::string> command) {
  if (command.empty()) throw Error("runner '" + runtime_id + "' needs a non-empty command");
  commands_[std::move(runtime_id)] = std::move(command);
}

const std::vector<std::string>* RunnerRegistry::find(std::string_view runtime_id) const {
  auto it = commands_.find(runtime_id);
  return it == commands_.end() ? nullptr : &it->second;
}

namespace {

// Writes to a runner that already exited must surface as EPIPE, not kill us.
void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { std::signal(SIGPIPE, SIG_IGN); });
}

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

ScriptSession::ScriptSession(const std::vector<std::string>& command, const ScriptHandle& handle, std::size_t k,
                             std::chrono::milliseconds timeout)
    : k_(k), timeout_(timeout) {
  ignore_sigpipe_once();
  if (command.empty()) throw RunnerLaunchError("empty runner command");
  if (!std::filesystem::exists(handle.path)) throw RunnerLaunchError("script not found: " + handle.path.string());

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw RunnerLaunchError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw RunnerLaunchError(std::string("pipe: ") + std::strerror(errno));
  }

  std::vector<std::string> args = command;
  args.push_back(handle.path.string());
  args.push_back(handle.entrypoint);
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  pid_t pid = -1;
  int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    throw RunnerLaunchError("cannot start '" + args[0] + "': " + std::strerror(rc));
  }
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  json hello{{"hello", {{"entrypoint", handle.entrypoint}, {"k", k_}}}};
  std::string reply;
  if (!write_line(hello.dump()) || !read_line(reply, timeout_)) {
    kill_child();
    throw RunnerLaunchError(eof_ ? "runner exited during handshake" : "runner handshake timed out");
  }
  json parsed = json::parse(reply, nullptr, false);
  if (parsed.is_object() && parsed.value("ready", false) == true) return;
  std::string why = parsed.is_object() && parsed.contains("error") ? parsed["error"].dump() : reply;
  kill_child();
  throw RunnerLaunchError("runner refused handshake: " + why);
}

ScriptSession::~ScriptSession() {
  if (alive()) close();
}

bool ScriptSession::write_line(const std::string& line) {
  std::string data = line + '\n';
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t w = ::write(to_child_, data.data() + off, data.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(w);
  }
  return true;
}

bool ScriptSession::read_line(std::string& line, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  while (true) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return true;
    }
    if (eof_) return false;
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (remaining.count() <= 0) return false;
    pollfd pfd{from_child_, POLLIN, 0};
    int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (pr < 0) {
      if (errno == EINTR) continue;
      eof_ = true;
      return false;
    }
    if (pr == 0) return false;
    char chunk[4096];
    ssize_t r = ::read(from_child_, chunk, sizeof chunk);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      eof_ = true;
      return false;
    }
    if (r == 0) {
      eof_ = true;
      continue;
    }
    buffer_.append(chunk, static_cast<std::size_t>(r));
  }
}

void ScriptSession::kill_child() {
  close_fd(to_child_);
  close_fd(from_child_);
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    int status = 0;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
  }
  pid_ = -1;
}

int ScriptSession::close() {
  if (pid_ <= 0) return -1;
  close_fd(to_child_);
  const auto deadline = Clock::now() + timeout_;
  int status = 0;
  while (true) {
    pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) break;
    if (r < 0 && errno != EINTR) break;
    if (Clock::now() >= deadline) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  close_fd(from_child_);
  pid_ = -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ScriptCall ScriptSession::label(std::string_view id, std::string_view text) {
  using Status = ScriptCall::Status;
  if (!alive()) return {Status::Crash, kAbstain, "runner not running"};

  json request{{"id", id}, {"text", text}};
  if (!write_line(request.dump(-1, ' ', false, json::error_handler_t::replace))) {
    kill_child();
    return {Status::Crash, kAbstain, "runner closed its input"};
  }
  std::string reply;
  if (!read_line(reply, timeout_)) {
    bool exited = eof_;
    kill_child();
    if (exited) return {Status::Crash, kAbstain, "runner exited"};
    return {Status::Timeout, kAbstain, "no reply within " + std::to_string(timeout_.count()) + " ms"};
  }
  json parsed = json::parse(reply, nullptr, false);
  if (!parsed.is_object() || !parsed.contains("id") || parsed["id"] != id) {
    kill_child();
    return {Status::Crash, kAbstain, "protocol violation: " + reply.substr(0, 120)};
  }
  if (auto err = parsed.find("error"); err != parsed.end()) {
    return {Status::ScriptError, kAbstain, err->is_string() ? err->get<std::string>() : err->dump()};
  }
  auto lab = parsed.find("label");
  if (lab == parsed.end() || !lab->is_number_integer())
    return {Status::OutOfRange, kAbstain, "non-integer label: " + (lab == parsed.end() ? "missing" : lab->dump())};
  auto v = lab->get<long long>();
  if (v < kAbstain || v >= static_cast<long long>(k_))
    return {Status::OutOfRange, kAbstain, "label " + std::to_string(v) + " outside [-1, " + std::to_string(k_) + ")"};
  return {Status::Ok, static_cast<Vote>(v), {}};
}

}  // namespace wsforge
