#pragma once

#include <nlohmann/json.hpp>

#include "octoforce/arch.hpp"
#include "octoforce/datapipe.hpp"
#include "octoforce/phantom.hpp"
#include "octoforce/trainer.hpp"

namespace octoforce {

using Json = nlohmann::ordered_json;

// Readers reject unknown keys and wrong types with a ConfigError naming the
// field path; missing keys keep their defaults.
void to_json(Json& j, const Range& v);
void to_json(Json& j, const PoseRanges& v);
void to_json(Json& j, const ToolPose& v);
void to_json(Json& j, const ForceVector& v);
void to_json(Json& j, const RoiOffset& v);
void to_json(Json& j, const StiffnessField& v);
void to_json(Json& j, const PhantomSpec& v);
void to_json(Json& j, const AcquisitionPlan& v);
void to_json(Json& j, const SplitSpec& v);
void to_json(Json& j, const LabelScaler& v);
void to_json(Json& j, const BlockSpec& v);
void to_json(Json& j, const ArchSpec& v);
void to_json(Json& j, const TrainConfig& v);
void to_json(Json& j, const InputSpec& v);
void to_json(Json& j, const TrainState& v);
void to_json(Json& j, const TrainLogRecord& v);

void read_json(const Json& j, Range& v, const std::string& path);
void read_json(const Json& j, PoseRanges& v, const std::string& path);
void read_json(const Json& j, ToolPose& v, const std::string& path);
void read_json(const Json& j, ForceVector& v, const std::string& path);
void read_json(const Json& j, RoiOffset& v, const std::string& path);
void read_json(const Json& j, StiffnessField& v, const std::string& path);
void read_json(const Json& j, PhantomSpec& v, const std::string& path);
void read_json(const Json& j, AcquisitionPlan& v, const std::string& path);
void read_json(const Json& j, SplitSpec& v, const std::string& path);
void read_json(const Json& j, LabelScaler& v, const std::string& path);
void read_json(const Json& j, BlockSpec& v, const std::string& path);
void read_json(const Json& j, ArchSpec& v, const std::string& path);
void read_json(const Json& j, TrainConfig& v, const std::string& path);
void read_json(const Json& j, InputSpec& v, const std::string& path);
void read_json(const Json& j, TrainState& v, const std::string& path);
void read_json(const Json& j, TrainLogRecord& v, const std::string& path);

// JSON has no infinity; +/-inf are written as the strings "inf" / "-inf".
Json number_or_inf(double v);

namespace detail {

void read_scalar(const Json& j, double& v, const std::string& path);
void read_scalar(const Json& j, std::int64_t& v, const std::string& path);
void read_scalar(const Json& j, int& v, const std::string& path);
void read_scalar(const Json& j, std::uint64_t& v, const std::string& path);
void read_scalar(const Json& j, bool& v, const std::string& path);
void read_scalar(const Json& j, std::string& v, const std::string& path);

template <typename T>
concept JsonScalar = requires(const Json& j, T& v, const std::string& p) { read_scalar(j, v, p); };

template <typename T>
void read_any(const Json& j, T& v, const std::string& path) {
  if constexpr (JsonScalar<T>) {
    read_scalar(j, v, path);
  } else {
    read_json(j, v, path);
  }
}

template <typename T>
void read_any(const Json& j, std::vector<T>& v, const std::string& path);

template <typename T, std::size_t N>
void read_any(const Json& j, std::array<T, N>& v, const std::string& path);

[[noreturn]] void type_error(const std::string& path, const char* expected);

template <typename T>
void read_any(const Json& j, std::vector<T>& v, const std::string& path) {
  if (!j.is_array()) type_error(path, "an array");
  v.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T item{};
    read_any(j[i], item, path + "[" + std::to_string(i) + "]");
    v.push_back(std::move(item));
  }
}

template <typename T, std::size_t N>
void read_any(const Json& j, std::array<T, N>& v, const std::string& path) {
  if (!j.is_array() || j.size() != N) type_error(path, ("an array of " + std::to_string(N)).c_str());
  for (std::size_t i = 0; i < N; ++i) read_any(j[i], v[i], path + "[" + std::to_string(i) + "]");
}

// Reads an object's keys; `done` rejects any key no `field` call claimed.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path);

  template <typename T>
  ObjectReader& field(const char* key, T& out) {
    claimed_.emplace_back(key);
    if (auto it = json_.find(key); it != json_.end()) read_any(*it, out, child(key));
    return *this;
  }
  const Json* raw(const char* key);
  std::string child(const char* key) const;
  void done() const;

 private:
  const Json& json_;
  std::string path_;
  std::vector<std::string> claimed_;
};

}  // namespace detail
}  // namespace octoforce
