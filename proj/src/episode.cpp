#include "dfml/episode.hpp"

#include "dfml/errors.hpp"
#include "dfml/serialize.hpp"

namespace dfml {

std::string origin_name(EpisodeOrigin o) {
  switch (o) {
    case EpisodeOrigin::recovered: return "recovered";
    case EpisodeOrigin::interpolated: return "interpolated";
    case EpisodeOrigin::real: return "real";
  }
  return "?";
}

EpisodeOrigin origin_from_name(const std::string& s) {
  if (s == "recovered") return EpisodeOrigin::recovered;
  if (s == "interpolated") return EpisodeOrigin::interpolated;
  if (s == "real") return EpisodeOrigin::real;
  throw InputError("unknown episode origin '" + s + "'");
}

namespace {
constexpr std::uint32_t kEpisodeMagic = 0x44464550;  // "DFEP"
}

void write_episode(BinWriter& w, const TaskEpisode& e) {
  w.u32(kEpisodeMagic);
  w.i32(e.api_id);
  w.str(origin_name(e.origin));
  w.vec_i32(e.label_space);
  w.mat(e.support.inputs);
  w.vec_i32(e.support.labels);
  w.mat(e.query.inputs);
  w.vec_i32(e.query.labels);
}

TaskEpisode read_episode(BinReader& r) {
  if (r.u32() != kEpisodeMagic) throw IoError("bad episode magic");
  TaskEpisode e;
  e.api_id = r.i32();
  e.origin = origin_from_name(r.str());
  e.label_space = r.vec_i32();
  e.support.inputs = r.mat();
  e.support.labels = r.vec_i32();
  e.query.inputs = r.mat();
  e.query.labels = r.vec_i32();
  e.support.api_id = e.api_id;
  e.query.api_id = e.api_id;
  return e;
}

void save_episode(const std::string& path, const TaskEpisode& e) {
  BinWriter w(path);
  write_episode(w, e);
}

TaskEpisode load_episode(const std::string& path) {
  BinReader r(path);
  return read_episode(r);
}

}  // namespace dfml
