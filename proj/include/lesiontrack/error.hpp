#pragma once

#include <stdexcept>
#include <string>

namespace lesiontrack {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system or stream failure (missing file, unwritable directory, short read).
class IoError : public Error {
public:
    using Error::Error;
};

/// Input file is readable but its contents are invalid (bad header, NaN voxels, bad JSON).
class FormatError : public Error {
public:
    using Error::Error;
};

/// A caller-supplied argument violates an operation's precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two grids that must coincide do not.
class GridMismatch : public Error {
public:
    using Error::Error;
};

/// Input is well formed but numerically degenerate (constant image, empty mask, ...).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

}  // namespace lesiontrack
