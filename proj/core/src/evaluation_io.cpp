#include <fmt/format.h>

#include "needleplan/evaluation.hpp"
#include "needleplan/text.hpp"

namespace needleplan {

namespace {

Vec3 vec_at(const std::vector<std::string>& tok, std::size_t at) {
  return Vec3(text::parse_double(tok[at]), text::parse_double(tok[at + 1]), text::parse_double(tok[at + 2]));
}

}  // namespace

std::vector<Target> parse_targets(const std::string& content) {
  std::vector<Target> out;
  for (const auto& line : text::content_lines(content)) {
    const auto tok = text::split_ws(line);
    if (tok.size() != 4 && tok.size() != 5) throw Error(ErrorCode::ParseError, "target line needs id x y z [label]: " + line);
    out.push_back({tok[0], vec_at(tok, 1), tok.size() == 5 ? tok[4] : std::string()});
  }
  return out;
}

std::string format_targets(std::span<const Target> targets) {
  std::string out = "# id x y z label\n";
  for (const auto& t : targets) out += fmt::format("{} {} {}\n", t.id, text::vec3(t.position), t.label);
  return out;
}

NoiseModel parse_noise(const std::string& content) {
  const auto doc = text::KeyValueDoc::parse(content);
  const auto& root = doc.root();
  for (const auto& [key, value] : root.values) {
    if (key != "tilt_deg" && key != "shift_mm" && key != "annotation_mm" && key != "registration_deg" &&
        key != "registration_mm") {
      throw Error(ErrorCode::ParseError, "unknown noise key: " + key);
    }
  }
  NoiseModel n;
  n.detachment_tilt_sigma = root.get_double("tilt_deg", 0.0);
  n.detachment_shift_sigma = root.get_double("shift_mm", 0.0);
  n.annotation_sigma = root.get_double("annotation_mm", 0.0);
  n.registration_rotation = root.get_double("registration_deg", 0.0);
  n.registration_translation = root.get_double("registration_mm", 0.0);
  n.validate();
  return n;
}

std::string format_noise(const NoiseModel& n) {
  return fmt::format("tilt_deg={}\nshift_mm={}\nannotation_mm={}\nregistration_deg={}\nregistration_mm={}\n",
                     text::num(n.detachment_tilt_sigma), text::num(n.detachment_shift_sigma),
                     text::num(n.annotation_sigma), text::num(n.registration_rotation),
                     text::num(n.registration_translation));
}

std::vector<std::pair<std::string, ObservedNeedle>> parse_observed(const std::string& content) {
  std::vector<std::pair<std::string, ObservedNeedle>> out;
  for (const auto& line : text::content_lines(content)) {
    const auto tok = text::split_ws(line);
    if (tok.size() != 7) throw Error(ErrorCode::ParseError, "observed line needs id tip(3) base(3): " + line);
    out.push_back({tok[0], ObservedNeedle{vec_at(tok, 1), vec_at(tok, 4)}});
  }
  return out;
}

std::vector<NeedleTrajectory> parse_planned(const std::string& content) {
  std::vector<NeedleTrajectory> out;
  for (const auto& line : text::content_lines(content)) {
    const auto tok = text::split_ws(line);
    if (tok.size() != 7) throw Error(ErrorCode::ParseError, "planned line needs id target(3) insertion(3): " + line);
    auto traj = NeedleTrajectory::make(Target{tok[0], vec_at(tok, 1), {}}, vec_at(tok, 4));
    traj.validate();
    out.push_back(traj);
  }
  return out;
}

std::string format_planned(std::span<const NeedleTrajectory> planned) {
  std::string out = "# id target_x target_y target_z insertion_x insertion_y insertion_z\n";
  for (const auto& p : planned) {
    out += fmt::format("{} {} {}\n", p.target.id, text::vec3(p.target.position), text::vec3(p.insertion_point));
  }
  return out;
}

DeskScene parse_scene(const std::string& content) {
  const auto doc = text::KeyValueDoc::parse(content);
  DeskScene scene = default_desk_scene();
  PhantomSpec& spec = scene.phantom;
  spec.organs.clear();
  spec.ribs.clear();
  for (const auto& s : doc.sections) {
    if (s.name == "body") {
      spec.body_semi_axes = s.get_vec3("semi_axes_mm");
      if (s.has("center_mm")) spec.body_center = s.get_vec3("center_mm");
      spec.body_hu = s.get_double("hu", spec.body_hu);
    } else if (s.name.rfind("organ ", 0) == 0) {
      const std::string name(text::trim(std::string_view(s.name).substr(6)));
      if (name.empty()) throw Error(ErrorCode::ParseError, "organ section without a name");
      spec.organs.push_back({name, s.get_vec3("center_mm"), s.get_double("radius_mm"), s.get_double("hu")});
    } else if (s.name == "rib") {
      spec.ribs.push_back({s.get_vec3("a_mm"), s.get_vec3("b_mm"), s.get_double("radius_mm"), s.get_double("hu", 1200.0)});
    } else if (s.name == "volume") {
      if (s.has("dims")) {
        const auto d = text::parse_doubles(s.get("dims"));
        if (d.size() != 3) throw Error(ErrorCode::ParseError, "dims needs three integers");
        for (int k = 0; k < 3; ++k) scene.dims[k] = static_cast<int>(d[k]);
      }
      if (s.has("spacing_mm")) scene.spacing = Vec3::Constant(s.get_double("spacing_mm"));
      if (s.has("seed")) scene.seed = static_cast<std::uint64_t>(text::parse_int(s.get("seed")));
      spec.noise_sigma = s.get_double("noise_sigma", spec.noise_sigma);
    } else if (!s.name.empty()) {
      throw Error(ErrorCode::ParseError, "unknown scene section: " + s.name);
    }
  }
  spec.validate();
  scene.targets.clear();
  int n = 1;
  for (const auto& organ : spec.organs) scene.targets.push_back({"T" + std::to_string(n++), organ.center, organ.name});
  return scene;
}

std::string format_scene(const DeskScene& scene) {
  const PhantomSpec& spec = scene.phantom;
  std::string out = fmt::format("[body]\nsemi_axes_mm={}\ncenter_mm={}\nhu={}\n", text::vec3(spec.body_semi_axes),
                                text::vec3(spec.body_center), text::num(spec.body_hu));
  for (const auto& o : spec.organs) {
    out += fmt::format("\n[organ {}]\ncenter_mm={}\nradius_mm={}\nhu={}\n", o.name, text::vec3(o.center),
                       text::num(o.radius), text::num(o.hu));
  }
  for (const auto& r : spec.ribs) {
    out += fmt::format("\n[rib]\na_mm={}\nb_mm={}\nradius_mm={}\nhu={}\n", text::vec3(r.a), text::vec3(r.b),
                       text::num(r.radius), text::num(r.hu));
  }
  out += fmt::format("\n[volume]\ndims={} {} {}\nspacing_mm={}\nseed={}\nnoise_sigma={}\n", scene.dims[0],
                     scene.dims[1], scene.dims[2], text::num(scene.spacing.x()), scene.seed,
                     text::num(spec.noise_sigma));
  return out;
}

std::string format_obj(const TriMesh& mesh) {
  std::string out;
  out.reserve(mesh.vertex_count() * 40 + mesh.triangle_count() * 24);
  for (const auto& v : mesh.vertices()) out += fmt::format("v {} {} {}\n", v.x(), v.y(), v.z());
  for (const auto& t : mesh.triangles()) out += fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
  return out;
}

TriMesh parse_obj(const std::string& content) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  for (const auto& line : text::content_lines(content)) {
    const auto tok = text::split_ws(line);
    if (tok[0] == "v") {
      if (tok.size() < 4) throw Error(ErrorCode::ParseError, "vertex needs three coordinates");
      verts.push_back(vec_at(tok, 1));
    } else if (tok[0] == "f") {
      if (tok.size() != 4) throw Error(ErrorCode::ParseError, "only triangular faces are supported");
      Triangle t{};
      for (int k = 0; k < 3; ++k) {
        // "f 1/2/3" style: keep the vertex index.
        const auto idx = text::parse_int(tok[k + 1].substr(0, tok[k + 1].find('/')));
        if (idx < 1) throw Error(ErrorCode::ParseError, "face index must be positive");
        t[k] = static_cast<std::uint32_t>(idx - 1);
      }
      tris.push_back(t);
    }
  }
  return TriMesh(std::move(verts), std::move(tris));
}

}  // namespace needleplan
