// Fixture generator: synthetic digit datasets (MNIST IDX layout), texture
// corpora, and seeded random backbone weight files for desk-scale runs
// where the real assets are unavailable.

#include <CLI11.hpp>
#include <iostream>

#include "percad/backbone.hpp"
#include "percad/synth.hpp"

using namespace percad;

int main(int argc, char** argv) {
  CLI::App app{"percad fixture data generator"};
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 1;
  Index train_n = 600, test_n = 100;
  Index count = 40, size = 64, channels = 3;
  double width = 1.0 / 16.0;

  auto* digits = app.add_subcommand(
      "digits", "stroke-rendered digit dataset in MNIST IDX layout");
  digits->add_option("--out", out, "output directory")->required();
  digits->add_option("--train", train_n, "train images per class");
  digits->add_option("--test", test_n, "test images per class");
  digits->add_option("--seed", seed, "generator seed");

  auto* tex = app.add_subcommand("textures", "folder of textured images");
  tex->add_option("--out", out, "output directory")->required();
  tex->add_option("--count", count, "number of images");
  tex->add_option("--size", size, "square resolution");
  tex->add_option("--channels", channels, "1 (PGM) or 3 (PPM)");
  tex->add_option("--seed", seed, "generator seed");

  auto* bb = app.add_subcommand(
      "backbone", "seeded random backbone weights file (VGG-19 layout)");
  bb->add_option("--out", out, "output file path")->required();
  bb->add_option("--width", width,
                 "width multiplier (1.0 = 512-filter tap)");
  bb->add_option("--seed", seed, "init seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("digits")) {
      synth::make_digit_dataset(out, train_n, test_n, seed);
      std::printf("wrote IDX digit dataset to %s (%lld train + %lld test "
                  "per class)\n",
                  out.c_str(), static_cast<long long>(train_n),
                  static_cast<long long>(test_n));
    } else if (app.got_subcommand("textures")) {
      synth::make_texture_folder(out, count, size, channels, seed);
      std::printf("wrote %lld %lldx%lld textures to %s\n",
                  static_cast<long long>(count), static_cast<long long>(size),
                  static_cast<long long>(size), out.c_str());
    } else if (app.got_subcommand("backbone")) {
      auto net = backbone::make_random_backbone<float>(width, seed);
      backbone::write_backbone_file(net, out);
      std::printf("wrote backbone (%lld-filter tap, fingerprint %s) to %s\n",
                  static_cast<long long>(net.channel_count),
                  net.fingerprint.c_str(), out.c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
