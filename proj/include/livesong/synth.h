#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "livesong/audio.h"
#include "livesong/manifest.h"

namespace livesong {

/// A looping four-note sine melody.
struct SynthSong {
  int index = 0;
  double root_midi = 0.0;
  std::array<int, 4> intervals{};  // semitones above the root
  double note_seconds = 0.0;
};

/// Deterministic demo song `index` (0-based). Indices 0..11 have distinct
/// roots three semitones apart and distinct interval patterns.
SynthSong demo_song(int index);

/// Renders `seconds` of the loop at `rate`. A version transposed by
/// `semitones` and slowed by `stretch` (note lengths multiplied) models a
/// cover; `seconds` is the length of the rendered output.
std::vector<float> render_song(const SynthSong& song, double seconds, double semitones = 0.0, double stretch = 1.0,
                               int rate = kSampleRate);

/// Crowd-like noise: lowpassed white noise with a slow amplitude swell.
std::vector<float> render_crowd_noise(double seconds, std::uint64_t seed, int rate = kSampleRate);

struct DemoDatasetOptions {
  int songs = 12;
  double seconds = kWindowSeconds;
  double cover_semitones = 1.0;
  double cover_stretch = 1.1;
  // Number of crowd-noise tracks to add (role noise).
  int noise_tracks = 0;
  std::uint64_t seed = 0;
};

struct DemoDataset {
  std::vector<TrackManifestEntry> originals;  // role reference
  std::vector<TrackManifestEntry> covers;     // role cover, same song ids
  std::vector<TrackManifestEntry> noise;
  std::filesystem::path reference_manifest;   // originals only
  std::filesystem::path query_manifest;       // covers only
  std::filesystem::path full_manifest;        // everything
};

/// Writes 16-bit WAVs and three manifests under `dir`. Track ids are
/// "song_NN" / "cover_NN", song ids "sNN". Covers are rendered
/// cover_stretch times longer so the full melody survives the stretch.
DemoDataset write_demo_dataset(const std::filesystem::path& dir, const DemoDatasetOptions& options = {});

}  // namespace livesong
