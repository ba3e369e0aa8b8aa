#include "rewardrag/manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "rewardrag/errors.hpp"

using nlohmann::json;

namespace rewardrag::manifest {

namespace {
std::string manifest_path(const std::string& workdir) {
  return (std::filesystem::path(workdir) / "manifest.json").string();
}
}  // namespace

Manifest Manifest::load(const std::string& workdir) {
  Manifest m;
  m.path_ = manifest_path(workdir);
  std::ifstream in(m.path_);
  if (!in) {
    return m;  // first run
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt manifest " + m.path_ + ": " + e.what());
  }
  for (auto it = j["stages"].begin(); it != j["stages"].end(); ++it) {
    StageRecord r;
    r.stage = it.key();
    const json& v = it.value();
    for (auto input = v["inputs"].begin(); input != v["inputs"].end(); ++input) {
      r.inputs[input.key()] = input.value().get<std::string>();
    }
    r.config_hash = v.value("config_hash", "");
    for (const auto& out : v["outputs"]) {
      r.outputs.push_back(out.get<std::string>());
    }
    r.duration_ms = v.value("duration_ms", 0.0);
    r.finished_at = v.value("finished_at", "");
    m.stages_[r.stage] = std::move(r);
  }
  return m;
}

void Manifest::save() const {
  json j;
  j["stages"] = json::object();
  for (const auto& [stage, r] : stages_) {
    json v;
    v["inputs"] = json::object();
    for (const auto& [path, hash] : r.inputs) {
      v["inputs"][path] = hash;
    }
    v["config_hash"] = r.config_hash;
    v["outputs"] = r.outputs;
    v["duration_ms"] = r.duration_ms;
    v["finished_at"] = r.finished_at;
    j["stages"][stage] = std::move(v);
  }
  std::ofstream out(path_);
  if (!out) {
    throw Error("cannot write manifest: " + path_);
  }
  out << j.dump(2) << '\n';
}

const StageRecord* Manifest::find(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it == stages_.end() ? nullptr : &it->second;
}

void Manifest::put(StageRecord record) {
  stages_[record.stage] = std::move(record);
}

bool Manifest::up_to_date(const std::string& stage,
                          const std::map<std::string, std::string>& inputs,
                          const std::string& config_hash) const {
  const StageRecord* r = find(stage);
  if (!r) return false;
  if (r->inputs != inputs || r->config_hash != config_hash) return false;
  for (const auto& out : r->outputs) {
    if (!std::filesystem::exists(out)) return false;
  }
  return true;
}

WorkdirLock::WorkdirLock(const std::string& workdir) {
  path_ = (std::filesystem::path(workdir) / ".lock").string();
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0) {
    throw Error("workdir is locked by another run (remove " + path_ +
                " if that run is gone)");
  }
}

WorkdirLock::~WorkdirLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace rewardrag::manifest
