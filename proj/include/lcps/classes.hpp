#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcps/errors.hpp"

namespace lcps {

struct ClassInfo {
  std::string name;
  bool is_thing = false;
  bool ignore = false;
};

/// Class id -> (name, thing flag, ignore flag). Id equals the position in the
/// table.
struct ClassTable {
  std::vector<ClassInfo> classes;

  std::size_t size() const { return classes.size(); }

  bool valid_id(std::int64_t id) const {
    return id >= 0 && static_cast<std::size_t>(id) < classes.size();
  }

  const ClassInfo& info(std::int32_t id) const {
    if (!valid_id(id)) throw label_error("class id out of table range");
    return classes[static_cast<std::size_t>(id)];
  }

  bool is_thing(std::int32_t id) const { return info(id).is_thing; }
  bool is_ignored(std::int32_t id) const { return info(id).ignore; }

  /// Evaluation needs at least one thing and one stuff class to report the
  /// split aggregates.
  void validate_for_evaluation() const {
    bool thing = false, stuff = false;
    for (const ClassInfo& c : classes) {
      if (c.ignore) continue;
      (c.is_thing ? thing : stuff) = true;
    }
    if (!thing || !stuff)
      throw config_error("class table needs at least one thing and one stuff class");
  }
};

/// Small driving-style ontology used by the synthetic scenes: class 0 is the
/// ignored void class, 1-3 are stuff, 4-7 are things.
inline ClassTable default_class_table() {
  ClassTable t;
  t.classes = {
      {"void", false, true},      {"road", false, false},
      {"vegetation", false, false}, {"building", false, false},
      {"car", true, false},       {"pedestrian", true, false},
      {"cyclist", true, false},   {"truck", true, false},
  };
  return t;
}

}  // namespace lcps
