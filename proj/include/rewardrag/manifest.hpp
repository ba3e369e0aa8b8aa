#pragma once

#include <map>
#include <string>
#include <vector>

namespace rewardrag::manifest {

/// One completed stage run. Input hashes and the config hash key the cache;
/// finished_at is the only place a wall-clock timestamp appears in the
/// pipeline's outputs.
struct StageRecord {
  std::string stage;
  std::map<std::string, std::string> inputs;  // path -> content hash (hex)
  std::string config_hash;
  std::vector<std::string> outputs;
  double duration_ms = 0.0;
  std::string finished_at;
};

class Manifest {
 public:
  static Manifest load(const std::string& workdir);
  void save() const;

  const StageRecord* find(const std::string& stage) const;
  void put(StageRecord record);

  /// True when the stage ran before with identical input and config hashes
  /// and all of its recorded outputs still exist.
  bool up_to_date(const std::string& stage,
                  const std::map<std::string, std::string>& inputs,
                  const std::string& config_hash) const;

  const std::map<std::string, StageRecord>& stages() const { return stages_; }

 private:
  std::string path_;
  std::map<std::string, StageRecord> stages_;
};

/// Exclusive per-workdir lock file, held for the duration of a subcommand.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::string& workdir);
  ~WorkdirLock();

  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

std::string now_iso8601();

}  // namespace rewardrag::manifest
