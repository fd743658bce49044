#pragma once

#include <stdexcept>
#include <string>

namespace roadfix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or violated precondition (shape, range, kernel parity, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Image file could not be read or written, or has an unsupported layout.
class CodecError : public Error {
 public:
  using Error::Error;
};

/// Manifest, tag sidecar, region log or experiment file is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling gave up without finding a region with enough road.
class NoValidRegion : public Error {
 public:
  NoValidRegion(std::string tile, int tries)
      : Error("no valid region in tile '" + tile + "' after " + std::to_string(tries) + " tries"),
        tile_(std::move(tile)) {}
  const std::string& tile() const { return tile_; }

 private:
  std::string tile_;
};

/// Checkpoint is truncated, corrupted, or was written for a different config.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training hit a non-finite loss or ran out of usable data.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace roadfix
