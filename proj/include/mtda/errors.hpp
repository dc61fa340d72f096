#pragma once

#include <stdexcept>
#include <string>

namespace mtda {

/// Invalid experiment/model configuration (bad spec values, shape mismatches).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset construction or ingestion failure (empty folder, missing split).
struct DatasetError : std::runtime_error {
  explicit DatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Graph-head misuse (e.g. a batch too small to form any pair).
struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A documented precondition was violated by the caller.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

/// Training produced non-finite values; message carries the diagnostic dump.
struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File IO failure (checkpoints, metrics, embeddings).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mtda
