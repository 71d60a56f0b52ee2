#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace streametm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Exit-code classes used by the CLI: 2 usage/IO, 3 numerical, 4 data format.
enum class errc : int { usage_io = 2, numerical = 3, data_format = 4 };

struct Error : std::runtime_error {
  errc code;
  Error(errc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

struct EmptyVocabularyError : Error {
  explicit EmptyVocabularyError(const std::string& msg)
      : Error(errc::data_format, msg) {}
};

struct FormatError : Error {
  std::size_t line_number;
  FormatError(std::size_t line, const std::string& msg)
      : Error(errc::data_format, "line " + std::to_string(line) + ": " + msg),
        line_number(line) {}
};

struct ZeroVectorError : Error {
  explicit ZeroVectorError(const std::string& msg)
      : Error(errc::numerical, msg) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& msg)
      : Error(errc::numerical, msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg)
      : Error(errc::data_format, msg) {}
};

struct DivergenceError : Error {
  int epoch;
  DivergenceError(int at_epoch, const std::string& msg)
      : Error(errc::numerical, msg + " (epoch " + std::to_string(at_epoch) + ")"),
        epoch(at_epoch) {}
};

struct ScheduleError : Error {
  std::size_t row;
  ScheduleError(std::size_t bad_row, const std::string& msg)
      : Error(errc::data_format, "row " + std::to_string(bad_row) + ": " + msg),
        row(bad_row) {}
};

struct PoolError : Error {
  int topic;
  PoolError(int bad_topic, const std::string& msg)
      : Error(errc::data_format, msg + " (topic " + std::to_string(bad_topic) + ")"),
        topic(bad_topic) {}
};

struct LabelError : Error {
  explicit LabelError(const std::string& msg) : Error(errc::data_format, msg) {}
};

struct DegenerateEmbeddingError : Error {
  explicit DegenerateEmbeddingError(const std::string& msg)
      : Error(errc::numerical, msg) {}
};

struct InvalidConfigError : Error {
  explicit InvalidConfigError(const std::string& msg)
      : Error(errc::usage_io, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(errc::usage_io, msg) {}
};

// FNV-1a, used to fingerprint vocabularies in model checkpoints.
inline std::uint64_t fnv1a64(const std::string& data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace streametm
