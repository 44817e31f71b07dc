#pragma once

// Schematic renders of sampled world states: a JSON scene description with a
// stable key order plus SVG text. Layout is a pure function of the state.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wm/worlds.hpp"

namespace wm {

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entity {
  std::string id;
  std::string glyph;  // mug, can, bowl, sphere, block, person or cell
  std::array<int, 3> color{0, 0, 0};
  double x = 0, y = 0, w = 0, h = 0;
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
};

struct Edge {
  std::string from, to, kind;  // kind: parent or partner
};

struct Arrow {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  std::string label;
};

struct SceneDescription {
  RenderKind kind = RenderKind::None;
  double width = 0, height = 0;
  double origin_x = 0;  // model x drawn at the left edge
  std::vector<Entity> entities;
  std::vector<SceneDescription> frames;
  std::vector<Edge> edges;
  std::vector<Arrow> overlay;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = render_kind_name(kind);
    j["width"] = width;
    j["height"] = height;
    j["origin_x"] = origin_x;
    j["entities"] = nlohmann::ordered_json::array();
    for (const auto& e : entities) {
      nlohmann::ordered_json ej;
      ej["id"] = e.id;
      ej["glyph"] = e.glyph;
      ej["color"] = e.color;
      ej["x"] = e.x;
      ej["y"] = e.y;
      ej["w"] = e.w;
      ej["h"] = e.h;
      ej["labels"] = e.labels;
      j["entities"].push_back(std::move(ej));
    }
    j["frames"] = nlohmann::ordered_json::array();
    for (const auto& f : frames) j["frames"].push_back(f.to_json());
    j["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"kind", e.kind}});
    j["overlay"] = nlohmann::ordered_json::array();
    for (const auto& a : overlay)
      j["overlay"].push_back({{"from", {a.x1, a.y1}}, {"to", {a.x2, a.y2}}, {"label", a.label}});
    return j;
  }
};

struct Rendered {
  SceneDescription scene;
  std::string svg;
};

namespace render_detail {

inline constexpr double kScale = 40.0;  // pixels per abstract unit

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string px(double units) { return fmt(units * kScale); }

inline std::string rgb(const std::array<int, 3>& c) {
  return "rgb(" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")";
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::vector<Value> list_items(const Value& v, const char* what) {
  std::vector<Value> out;
  const Value* cur = &v;
  for (; cur->is_pair(); cur = &cdr(*cur)) out.push_back(car(*cur));
  if (!cur->is_nil()) throw RenderError(std::string("expected a list of ") + what + ", got " + to_string(v));
  return out;
}

/// Value stored under symbol `key` in an association list.
inline std::optional<Value> field(const Value& alist, std::string_view key) {
  for (const Value* cur = &alist; cur->is_pair(); cur = &cdr(*cur)) {
    const Value& e = car(*cur);
    if (e.is_pair() && car(e).is_symbol() && symbol_name(car(e).as_symbol()) == key) return cdr(e);
  }
  return std::nullopt;
}

inline Value need(const Value& alist, std::string_view key) {
  auto v = field(alist, key);
  if (!v) throw RenderError("state entry has no '" + std::string(key) + "' field: " + to_string(alist));
  return *v;
}

inline double need_number(const Value& alist, std::string_view key) {
  const Value v = need(alist, key);
  if (!v.is_number()) throw RenderError("field '" + std::string(key) + "' is not a number");
  return v.as_number();
}

inline std::string name_of(const Value& v) {
  if (v.is_symbol()) return symbol_name(v.as_symbol());
  return to_string(v);
}

inline std::array<int, 3> color_of(const Value& v) {
  auto items = list_items(v, "color components");
  if (items.size() != 3) throw RenderError("color is not an RGB triple: " + to_string(v));
  std::array<int, 3> c{};
  for (int i = 0; i < 3; ++i) {
    if (!items[i].is_number()) throw RenderError("color component is not a number: " + to_string(v));
    c[i] = static_cast<int>(items[i].as_number());
  }
  return c;
}

inline std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) + "\" height=\"" + px(h) + "\" viewBox=\"0 0 " +
         px(w) + " " + px(h) + "\">\n<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + px(w) + "\" height=\"" +
         px(h) + "\" fill=\"white\"/>\n";
}

inline std::string glyph_svg(const Entity& e, double ox = 0, double oy = 0) {
  const std::string fill = rgb(e.color);
  const std::string cls = "glyph glyph-" + e.glyph;
  const double x = e.x + ox, y = e.y + oy;
  std::string s = "<g class=\"" + cls + "\" data-id=\"" + escape(e.id) + "\">";
  if (e.glyph == "sphere") {
    s += "<circle cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"" + px(e.w / 2) + "\" fill=\"" + fill +
         "\" stroke=\"black\"/>";
  } else if (e.glyph == "bowl") {
    s += "<path d=\"M " + px(x - e.w / 2) + " " + px(y - e.h) + " A " + px(e.w / 2) + " " + px(e.h) + " 0 0 0 " +
         px(x + e.w / 2) + " " + px(y - e.h) + " Z\" fill=\"" + fill + "\" stroke=\"black\"/>";
  } else if (e.glyph == "mug") {
    s += "<rect x=\"" + px(x - e.w / 2) + "\" y=\"" + px(y - e.h) + "\" width=\"" + px(e.w * 0.8) + "\" height=\"" +
         px(e.h) + "\" fill=\"" + fill + "\" stroke=\"black\"/>";
    s += "<circle cx=\"" + px(x + e.w * 0.3) + "\" cy=\"" + px(y - e.h / 2) + "\" r=\"" + px(e.h / 4) +
         "\" fill=\"none\" stroke=\"" + fill + "\" stroke-width=\"4\"/>";
  } else if (e.glyph == "person") {
    s += "<circle cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"" + px(e.w / 2) + "\" fill=\"" + fill +
         "\" stroke=\"black\"/>";
    s += "<text x=\"" + px(x) + "\" y=\"" + px(y + e.w / 2 + 0.35) + "\" font-size=\"12\" text-anchor=\"middle\">" +
         escape(e.labels.value("name", e.id)) + "</text>";
  } else if (e.glyph == "cell") {
    s += "<rect x=\"" + px(x) + "\" y=\"" + px(y) + "\" width=\"" + px(e.w) + "\" height=\"" + px(e.h) +
         "\" fill=\"" + fill + "\" stroke=\"black\"/>";
    s += "<text x=\"" + px(x + e.w / 2) + "\" y=\"" + px(y + e.h / 2) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + escape(e.labels.value("location", std::string())) +
         "</text>";
  } else {  // can, block: a plain rectangle standing on y
    s += "<rect x=\"" + px(x - e.w / 2) + "\" y=\"" + px(y - e.h) + "\" width=\"" + px(e.w) + "\" height=\"" +
         px(e.h) + "\" fill=\"" + fill + "\" stroke=\"black\"/>";
  }
  return s + "</g>\n";
}

// --- table scenes -------------------------------------------------------------

inline SceneDescription table_scene(const Value& state) {
  SceneDescription d;
  d.kind = RenderKind::TableScene;
  const auto objects = list_items(state, "objects");
  const double spacing = 1.5, table_y = 2.0;
  d.width = std::max<double>(1, static_cast<double>(objects.size())) * spacing + 1.0;
  d.height = 3.0;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Value& o = objects[i];
    Entity e;
    e.id = name_of(need(o, "object-id"));
    e.glyph = name_of(need(o, "shape"));
    if (e.glyph != "mug" && e.glyph != "can" && e.glyph != "bowl") throw RenderError("unknown shape " + e.glyph);
    e.color = color_of(need(o, "color"));
    e.x = 1.0 + spacing * static_cast<double>(i);
    e.y = table_y;
    e.w = 1.0;
    e.h = e.glyph == "can" ? 1.4 : e.glyph == "bowl" ? 0.6 : 1.0;
    e.labels["shape"] = e.glyph;
    d.entities.push_back(std::move(e));
  }
  return d;
}

inline std::string table_svg(const SceneDescription& d) {
  std::string s = svg_open(d.width, d.height);
  s += "<line class=\"table\" x1=\"0\" y1=\"" + px(2.0) + "\" x2=\"" + px(d.width) + "\" y2=\"" + px(2.0) +
       "\" stroke=\"black\" stroke-width=\"3\"/>\n";
  for (const auto& e : d.entities) s += glyph_svg(e);
  return s + "</svg>\n";
}

// --- physics frames -------------------------------------------------------------

inline SceneDescription frame_sequence(const Value& state) {
  SceneDescription d;
  d.kind = RenderKind::FrameSequence;
  std::vector<std::pair<double, Value>> frames;
  for (const auto& entry : list_items(state, "time steps")) {
    if (!entry.is_pair() || !car(entry).is_number()) throw RenderError("time step is not (time . state)");
    frames.emplace_back(car(entry).as_number(), cdr(entry));
  }
  std::stable_sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& [t, st] : frames) {
    SceneDescription f;
    f.kind = RenderKind::FrameSequence;
    for (const auto& o : list_items(need(st, "scene_states"), "objects")) {
      Entity e;
      e.id = name_of(need(o, "object_id"));
      e.glyph = name_of(need(o, "shape"));
      if (e.glyph != "sphere" && e.glyph != "block") throw RenderError("unknown shape " + e.glyph);
      e.color = color_of(need(o, "color"));
      const double r = need_number(o, "object_radius");
      e.x = need_number(o, "x");
      e.w = e.h = 2 * r;
      e.labels["t"] = t;
      e.labels["v"] = need_number(o, "v");
      e.labels["mass"] = need_number(o, "mass");
      lo = first ? e.x - r : std::min(lo, e.x - r);
      hi = first ? e.x + r : std::max(hi, e.x + r);
      first = false;
      f.entities.push_back(std::move(e));
    }
    d.frames.push_back(std::move(f));
  }
  d.origin_x = lo - 1;
  d.width = hi - lo + 2;
  d.height = 2.5 * static_cast<double>(d.frames.size());
  for (auto& f : d.frames) {
    f.width = d.width;
    f.height = 2.5;
    f.origin_x = d.origin_x;
  }
  return d;
}

inline std::string frames_svg(const SceneDescription& d) {
  std::string s = svg_open(d.width, d.height);
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const double base = 2.5 * static_cast<double>(i) + 2.2;
    s += "<g class=\"frame\" data-frame=\"" + std::to_string(i) + "\">\n";
    s += "<line class=\"ground\" x1=\"0\" y1=\"" + px(base) + "\" x2=\"" + px(d.width) + "\" y2=\"" + px(base) +
         "\" stroke=\"gray\"/>\n";
    for (const auto& e : d.frames[i].entities) {
      Entity g = e;
      g.x = e.x - d.origin_x;
      g.y = e.glyph == "sphere" ? base - e.h / 2 : base;
      s += glyph_svg(g);
    }
    s += "</g>\n";
  }
  return s + "</svg>\n";
}

// --- family trees -------------------------------------------------------------

inline SceneDescription family_tree(const Value& state) {
  SceneDescription d;
  d.kind = RenderKind::FamilyTree;
  const auto people = list_items(state, "persons");
  std::map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  for (const auto& p : people) {
    ids.push_back(name_of(need(p, "person-id")));
    index[ids.back()] = ids.size() - 1;
  }
  auto ref = [](const Value& p, std::string_view key) -> std::optional<std::string> {
    auto v = field(p, key);
    if (!v || v->is_nil()) return std::nullopt;
    return name_of(*v);
  };
  std::vector<int> gen(people.size(), -1);
  // Parents always precede their children and partners in tree order.
  for (std::size_t i = 0; i < people.size(); ++i) {
    if (auto p1 = ref(people[i], "parent-1-id"); p1 && index.count(*p1)) {
      gen[i] = gen[index[*p1]] + 1;
    } else if (auto pt = ref(people[i], "partner-id"); pt && index.count(*pt) && index[*pt] < i) {
      gen[i] = gen[index[*pt]];
    } else {
      gen[i] = 0;
    }
  }
  std::map<int, int> slots;
  int max_slot = 0, max_gen = 0;
  for (std::size_t i = 0; i < people.size(); ++i) {
    const Value& p = people[i];
    Entity e;
    e.id = ids[i];
    e.glyph = "person";
    const std::string gender = name_of(need(p, "gender"));
    e.color = gender == "male" ? std::array<int, 3>{110, 150, 220} : std::array<int, 3>{230, 140, 170};
    const int slot = slots[gen[i]]++;
    max_slot = std::max(max_slot, slot);
    max_gen = std::max(max_gen, gen[i]);
    e.x = 1.0 + 1.6 * slot;
    e.y = 1.0 + 2.0 * gen[i];
    e.w = e.h = 0.8;
    e.labels["name"] = name_of(need(p, "name"));
    e.labels["gender"] = gender;
    e.labels["generation"] = gen[i];
    d.entities.push_back(std::move(e));
    for (const char* k : {"parent-1-id", "parent-2-id"})
      if (auto par = ref(p, k)) d.edges.push_back({*par, ids[i], "parent"});
    if (auto pt = ref(p, "partner-id"); pt && ids[i] < *pt) d.edges.push_back({ids[i], *pt, "partner"});
  }
  d.width = 2.0 + 1.6 * max_slot;
  d.height = 2.0 + 2.0 * max_gen + 0.5;
  return d;
}

inline std::string tree_svg(const SceneDescription& d) {
  std::map<std::string, const Entity*> by_id;
  for (const auto& e : d.entities) by_id[e.id] = &e;
  std::string s = svg_open(d.width, d.height);
  for (const auto& edge : d.edges) {
    auto a = by_id.find(edge.from), b = by_id.find(edge.to);
    if (a == by_id.end() || b == by_id.end()) continue;
    s += "<line class=\"edge edge-" + edge.kind + "\" x1=\"" + px(a->second->x) + "\" y1=\"" + px(a->second->y) +
         "\" x2=\"" + px(b->second->x) + "\" y2=\"" + px(b->second->y) + "\" stroke=\"" +
         (edge.kind == "partner" ? "red" : "black") + "\"" + (edge.kind == "partner" ? " stroke-dasharray=\"4\"" : "") +
         "/>\n";
  }
  for (const auto& e : d.entities) s += glyph_svg(e);
  return s + "</svg>\n";
}

// --- gridworld -------------------------------------------------------------

struct GridMap {
  std::vector<std::vector<std::string>> rows;
  int initial_x = 1, initial_y = 1;
};

inline GridMap grid_map(const WorldModel& world) {
  GridMap g;
  const std::vector<SExpr> exprs{parse_one("gridworld"), parse_one("initial_x"), parse_one("initial_y")};
  for_each_world(world, 0, 1, exprs, [&](std::uint64_t, std::span<const Value> v) {
    for (const auto& row : list_items(v[0], "rows")) {
      g.rows.emplace_back();
      for (const auto& cell : list_items(row, "cells")) g.rows.back().push_back(name_of(cell));
    }
    g.initial_x = static_cast<int>(v[1].as_number());
    g.initial_y = static_cast<int>(v[2].as_number());
  });
  return g;
}

inline std::array<int, 3> cell_color(const std::string& type) {
  if (type == "lawn") return {140, 200, 120};
  if (type == "office") return {150, 170, 220};
  if (type == "sushi" || type == "pizza" || type == "vegetarian") return {250, 190, 90};
  return {200, 200, 200};
}

inline int increment(const std::string& dir, bool horizontal) {
  if (horizontal) return dir == "west" ? -1 : dir == "east" ? 1 : 0;
  return dir == "north" ? -1 : dir == "south" ? 1 : 0;
}

/// Same movement rule as the model's gridworld_transition, including its
/// bounds check on the current coordinate rather than the next one.
inline std::pair<int, int> transition(const GridMap& g, int x, int y, const std::string& dir) {
  const int max_x = static_cast<int>(g.rows.at(0).size());
  const int max_y = static_cast<int>(g.rows.size());
  int nx = x >= max_x ? x : x + increment(dir, true);
  if (nx < 1) nx = x;
  int ny = y >= max_y ? y : y + increment(dir, false);
  if (ny < 1) ny = y;
  return {nx, ny};
}

inline SceneDescription gridworld(const Value& state, const GridMap& g) {
  SceneDescription d;
  d.kind = RenderKind::Gridworld;
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    for (std::size_t c = 0; c < g.rows[r].size(); ++c) {
      Entity e;
      e.id = "cell-" + std::to_string(c + 1) + "-" + std::to_string(r + 1);
      e.glyph = "cell";
      e.color = cell_color(g.rows[r][c]);
      e.x = static_cast<double>(c);
      e.y = static_cast<double>(r);
      e.w = e.h = 1.0;
      e.labels["location"] = g.rows[r][c];
      d.entities.push_back(std::move(e));
    }
  }
  d.width = g.rows.empty() ? 0 : static_cast<double>(g.rows[0].size());
  d.height = static_cast<double>(g.rows.size());
  const auto steps = list_items(state, "policy steps");
  int x = g.initial_x, y = g.initial_y;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto parts = list_items(steps[i], "action and location");
    if (parts.size() != 2 || !parts[0].is_pair()) throw RenderError("policy step is not (action location)");
    const std::string motion = name_of(car(parts[0]));
    const std::string dir = name_of(cdr(parts[0]));
    if (i == 0) continue;  // the (start . start) entry
    const auto [nx, ny] = transition(g, x, y, dir);
    d.overlay.push_back({x - 0.5, y - 0.5, nx - 0.5, ny - 0.5, motion + " " + dir});
    x = nx;
    y = ny;
  }
  return d;
}

inline std::string grid_svg(const SceneDescription& d) {
  std::string s = svg_open(d.width, d.height);
  s += "<defs><marker id=\"arrow\" markerWidth=\"8\" markerHeight=\"8\" refX=\"6\" refY=\"3\" orient=\"auto\">"
       "<path d=\"M0,0 L0,6 L6,3 z\" fill=\"black\"/></marker></defs>\n";
  for (const auto& e : d.entities) s += glyph_svg(e);
  for (const auto& a : d.overlay) {
    s += "<line class=\"trajectory\" x1=\"" + px(a.x1) + "\" y1=\"" + px(a.y1) + "\" x2=\"" + px(a.x2) +
         "\" y2=\"" + px(a.y2) + "\" stroke=\"black\" stroke-width=\"3\" marker-end=\"url(#arrow)\"><title>" +
         escape(a.label) + "</title></line>\n";
  }
  return s + "</svg>\n";
}

}  // namespace render_detail

/// Lays out and draws a state produced by sample_world_state for `world`.
inline Rendered render_scene(const Value& state, const WorldModel& world) {
  namespace rd = render_detail;
  Rendered out;
  switch (world.render_kind) {
    case RenderKind::TableScene:
      out.scene = rd::table_scene(state);
      out.svg = rd::table_svg(out.scene);
      break;
    case RenderKind::FrameSequence:
      out.scene = rd::frame_sequence(state);
      out.svg = rd::frames_svg(out.scene);
      break;
    case RenderKind::FamilyTree:
      out.scene = rd::family_tree(state);
      out.svg = rd::tree_svg(out.scene);
      break;
    case RenderKind::Gridworld: {
      static std::mutex mu;
      static std::optional<rd::GridMap> cached;
      std::unique_lock<std::mutex> lock(mu);
      if (!cached) cached = rd::grid_map(world);
      const rd::GridMap g = *cached;
      lock.unlock();
      out.scene = rd::gridworld(state, g);
      out.svg = rd::grid_svg(out.scene);
      break;
    }
    case RenderKind::None:
      throw RenderError("world '" + world.id + "' has nothing to render");
  }
  return out;
}

}  // namespace wm
