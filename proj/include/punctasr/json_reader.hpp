#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "punctasr/vocab.hpp"

namespace punctasr {

using json = nlohmann::json;

// Reads fields out of a JSON object and rejects keys nobody asked for.
class JsonReader {
 public:
  JsonReader(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw InvalidInput(where_ + ": expected an object");
  }

  // Leaves out untouched when the key is absent.
  template <class T>
  JsonReader& optional(const char* key, T& out) {
    seen_.insert(key);
    if (const auto it = object_.find(key); it != object_.end()) {
      try {
        out = it->template get<T>();
      } catch (const json::exception& e) {
        throw InvalidInput(where_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  template <class T>
  JsonReader& required(const char* key, T& out) {
    if (!object_.contains(key)) throw InvalidInput(where_ + ": missing required key '" + key + "'");
    return optional(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) throw InvalidInput(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace punctasr
