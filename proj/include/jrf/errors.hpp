#pragma once

#include <stdexcept>
#include <string>

namespace jrf {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct RevisionError : std::runtime_error {
  explicit RevisionError(const std::string& msg) : std::runtime_error("revision error: " + msg) {}
};

struct YieldError : std::runtime_error {
  explicit YieldError(const std::string& msg) : std::runtime_error("yield error: " + msg) {}
};

}  // namespace jrf
