#include "livesong/synth.h"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace livesong {

namespace {

constexpr std::array<std::array<int, 4>, 12> kPatterns = {{
    {0, 4, 7, 12},
    {0, 3, 7, 10},
    {0, 7, 5, 9},
    {0, 2, 4, 11},
    {0, 5, 9, 2},
    {0, 12, 3, 8},
    {0, 8, 1, 6},
    {0, 6, 10, 3},
    {0, 9, 2, 14},
    {0, 1, 11, 5},
    {0, 10, 6, 13},
    {0, 11, 4, 1},
}};

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

std::string two_digits(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", i);
  return buf;
}

}  // namespace

SynthSong demo_song(int index) {
  if (index < 0) throw std::invalid_argument("demo song index must be non-negative");
  SynthSong s;
  s.index = index;
  s.root_midi = 40.0 + 3.0 * (index % 12) + 1.0 * (index / 12);
  s.intervals = kPatterns[index % kPatterns.size()];
  s.note_seconds = 0.35 + 0.03 * (index % 12);
  return s;
}

std::vector<float> render_song(const SynthSong& song, double seconds, double semitones, double stretch, int rate) {
  if (seconds < 0 || stretch <= 0 || rate <= 0) throw std::invalid_argument("render_song: bad arguments");
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<float> out(n);
  const double note_len = song.note_seconds * stretch;
  const double fade = 0.01;
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const auto note = static_cast<long long>(std::floor(t / note_len));
    const double within = t - static_cast<double>(note) * note_len;
    const double f = midi_to_hz(song.root_midi + semitones + song.intervals[note % 4]);
    phase += 2.0 * std::numbers::pi * f / rate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
    const double env = std::min({1.0, within / fade, (note_len - within) / fade});
    out[i] = static_cast<float>(0.4 * env * std::sin(phase));
  }
  return out;
}

std::vector<float> render_crowd_noise(double seconds, std::uint64_t seed, int rate) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<float> out(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  double lp = 0.0;
  const double alpha = 0.15;
  for (std::size_t i = 0; i < n; ++i) {
    lp += alpha * (white(rng) - lp);
    const double t = static_cast<double>(i) / rate;
    const double swell = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * t / 7.0);
    out[i] = static_cast<float>(std::clamp(0.5 * swell * lp, -1.0, 1.0));
  }
  return out;
}

DemoDataset write_demo_dataset(const std::filesystem::path& dir, const DemoDatasetOptions& options) {
  if (options.songs < 1) throw std::invalid_argument("demo dataset needs at least one song");
  std::filesystem::create_directories(dir / "audio");
  DemoDataset ds;
  auto write = [&](const std::string& id, const std::string& song_id, Role role, std::vector<float> samples,
                   const std::string& title) {
    TrackManifestEntry e;
    e.track_id = id;
    e.song_id = song_id;
    e.role = role;
    e.path = dir / "audio" / (id + ".wav");
    e.duration_s = static_cast<double>(samples.size()) / kSampleRate;
    e.metadata["title"] = title;
    write_wav(e.path, RawAudio{{std::move(samples)}, kSampleRate});
    return e;
  };
  for (int i = 0; i < options.songs; ++i) {
    const auto song = demo_song(i);
    const auto nn = two_digits(i);
    ds.originals.push_back(
        write("song_" + nn, "s" + nn, Role::kReference, render_song(song, options.seconds), "Demo song " + nn));
    ds.covers.push_back(write("cover_" + nn, "s" + nn, Role::kCover,
                              render_song(song, options.seconds * options.cover_stretch, options.cover_semitones,
                                          options.cover_stretch),
                              "Demo song " + nn + " (cover)"));
  }
  for (int i = 0; i < options.noise_tracks; ++i) {
    ds.noise.push_back(write("noise_" + two_digits(i), "", Role::kNoise,
                             render_crowd_noise(options.seconds, options.seed + static_cast<std::uint64_t>(i)),
                             "Crowd noise " + two_digits(i)));
  }
  ds.reference_manifest = dir / "references.jsonl";
  ds.query_manifest = dir / "queries.jsonl";
  ds.full_manifest = dir / "manifest.jsonl";
  write_manifest(ds.reference_manifest, ds.originals);
  write_manifest(ds.query_manifest, ds.covers);
  auto all = ds.originals;
  all.insert(all.end(), ds.covers.begin(), ds.covers.end());
  all.insert(all.end(), ds.noise.begin(), ds.noise.end());
  write_manifest(ds.full_manifest, all);
  return ds;
}

}  // namespace livesong
