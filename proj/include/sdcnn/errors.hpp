#pragma once

#include <stdexcept>
#include <string>

namespace sdcnn {

// Base class for everything this library throws on bad input. Internal logic
// errors (broken invariants) use std::logic_error instead, so callers can
// map Error -> exit code 1 and anything else -> exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wrong grid/tensor/vector dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Box or index outside the parent image.
class BoundsError : public Error {
public:
    using Error::Error;
};

// Contour/mask annotations that cannot be used.
class AnnotationError : public Error {
public:
    using Error::Error;
};

// Bad configuration values (empty training set, k > n folds, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Mathematical preconditions violated (fractions not summing to 1, single
// class labels, empty metric region, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Dataset-level problems: missing sources, unknown tags, non-finite values.
class DataError : public Error {
public:
    using Error::Error;
};

// File I/O and container-format problems.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace sdcnn
