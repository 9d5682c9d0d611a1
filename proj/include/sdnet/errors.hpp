#pragma once

#include <stdexcept>
#include <string>

namespace sdnet {

/// Base of every error raised by the library. `category()` names the kind of
/// failure so callers (notably the CLI) can report it without RTTI games.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
  virtual const char* category() const noexcept { return "error"; }
};

#define SDNET_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(message) {}      \
    const char* category() const noexcept override { return tag; }     \
  };

SDNET_DEFINE_ERROR(ShapeError, "shape")
SDNET_DEFINE_ERROR(ArgumentError, "argument")
SDNET_DEFINE_ERROR(IngestionError, "ingestion")
SDNET_DEFINE_ERROR(MetadataError, "metadata")
SDNET_DEFINE_ERROR(CheckpointError, "checkpoint")
SDNET_DEFINE_ERROR(TrainingError, "training")
SDNET_DEFINE_ERROR(UsageError, "usage")
SDNET_DEFINE_ERROR(ConfigError, "config")
SDNET_DEFINE_ERROR(LeakageError, "leakage")
SDNET_DEFINE_ERROR(IoError, "io")

#undef SDNET_DEFINE_ERROR

}  // namespace sdnet
