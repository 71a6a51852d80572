#pragma once

#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace freqalign {

/// Base class for every error raised by the library. Command-line tools map
/// any escaping Error to a nonzero exit status.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

class StateError : public Error {
public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename E = InvalidArgument, typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw E(detail::concat(std::forward<Args>(args)...));
}

template <typename E = InvalidArgument, typename... Args>
void require(bool cond, Args&&... args) {
  if (!cond) fail<E>(std::forward<Args>(args)...);
}

namespace log {

inline bool& quiet() {
  static bool q = false;
  return q;
}

template <typename... Args>
void warn(Args&&... args) {
  if (quiet()) return;
  std::cerr << "[freqalign] warning: " << detail::concat(std::forward<Args>(args)...) << '\n';
}

template <typename... Args>
void info(Args&&... args) {
  if (quiet()) return;
  std::cerr << "[freqalign] " << detail::concat(std::forward<Args>(args)...) << '\n';
}

}  // namespace log

}  // namespace freqalign
