#pragma once

#include <chrono>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <sys/types.h>

#include "wsforge/error.hpp"
#include "wsforge/lfkit.hpp"

namespace wsforge {

// Maps a runtime id (e.g. "python") to the command prefix that starts a
// runner. The script path and entrypoint are appended as the final two
// arguments: `<command...> <script_path> <entrypoint>`.
class RunnerRegistry {
 public:
  void add(std::string runtime_id, std::vector<std::string> command);
  const std::vector<std::string>* find(std::string_view runtime_id) const;
  bool contains(std::string_view runtime_id) const { return find(runtime_id) != nullptr; }

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> commands_;
};

class RunnerLaunchError : public Error {
 public:
  using Error::Error;
};

struct ScriptCall {
  enum class Status { Ok, Timeout, Crash, OutOfRange, ScriptError };
  Status status = Status::Ok;
  Vote vote = kAbstain;
  std::string message;
};

/// One runner child process speaking the line-delimited JSON protocol over
/// its stdin/stdout:
///
///   engine -> runner   {"hello": {"entrypoint": str, "k": int}}
///   runner -> engine   {"ready": true} | {"error": str}
///   engine -> runner   {"id": str, "text": str}
///   runner -> engine   {"id": str, "label": int[, "error": str]}
///
/// Requests are issued one at a time; each waits at most `timeout` for its
/// reply. After a timeout or crash the child is killed and the session is
/// dead.
class ScriptSession {
 public:
  ScriptSession(const std::vector<std::string>& command, const ScriptHandle& handle, std::size_t k,
                std::chrono::milliseconds timeout);
  ~ScriptSession();

  ScriptSession(const ScriptSession&) = delete;
  ScriptSession& operator=(const ScriptSession&) = delete;

  ScriptCall label(std::string_view id, std::string_view text);
  bool alive() const noexcept { return pid_ > 0; }

  // Closes the request stream and waits for the child; returns its exit status.
  int close();

 private:
  bool write_line(const std::string& line);
  // False on timeout or stream close (eof_ set on close).
  bool read_line(std::string& line, std::chrono::milliseconds timeout);
  void kill_child();

  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::size_t k_;
  std::chrono::milliseconds timeout_;
  std::string buffer_;
  bool eof_ = false;
};

}  // namespace wsforge
