#pragma once

#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>

namespace atal {

/// Shortest round-trip decimal rendering of a double. Used for every float
/// that lands in a text artifact so that identical runs produce identical
/// bytes and parsing recovers the exact value.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("fmt_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("parse_double: bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace atal
