#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace covnz {

// %.17g: enough digits to round-trip any double.
inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

// Minimal insertion-ordered JSON writer. Key order is fixed by the caller,
// doubles print with 17 significant digits, and non-finite values become
// null; together that makes artifact bytes reproducible.
class JsonWriter {
public:
  JsonWriter& begin_object() { return token("{", true); }
  JsonWriter& end_object() { return close("}"); }
  JsonWriter& begin_array() { return token("[", true); }
  JsonWriter& end_array() { return close("]"); }

  JsonWriter& key(const std::string& k) {
    comma();
    out_ += '"' + json_escape(k) + "\":";
    pending_value_ = true;
    return *this;
  }

  JsonWriter& value(double v) {
    comma();
    out_ += std::isfinite(v) ? format_g17(v) : "null";
    return *this;
  }
  JsonWriter& value(long long v) {
    comma();
    out_ += std::to_string(v);
    return *this;
  }
  JsonWriter& value(int v) { return value(static_cast<long long>(v)); }
  JsonWriter& value(unsigned long long v) {
    comma();
    out_ += std::to_string(v);
    return *this;
  }
  JsonWriter& value(bool v) {
    comma();
    out_ += v ? "true" : "false";
    return *this;
  }
  JsonWriter& value(const std::string& v) {
    comma();
    out_ += '"' + json_escape(v) + '"';
    return *this;
  }
  JsonWriter& value(const char* v) { return value(std::string(v)); }
  JsonWriter& null() {
    comma();
    out_ += "null";
    return *this;
  }

  template <typename T>
  JsonWriter& field(const std::string& k, const T& v) {
    key(k);
    return value(v);
  }

  const std::string& str() const { return out_; }

private:
  JsonWriter& token(const char* t, bool opens) {
    comma();
    out_ += t;
    if (opens) fresh_.push_back(true);
    return *this;
  }
  JsonWriter& close(const char* t) {
    out_ += t;
    if (!fresh_.empty()) fresh_.pop_back();
    return *this;
  }
  void comma() {
    if (pending_value_) {
      pending_value_ = false;
      return;
    }
    if (!fresh_.empty()) {
      if (!fresh_.back())
        out_ += ',';
      else
        fresh_.back() = false;
    }
  }

  std::string out_;
  std::vector<bool> fresh_;
  bool pending_value_ = false;
};

}  // namespace covnz
