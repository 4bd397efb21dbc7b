#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <png.h>

#include "pbd/image_io.hpp"
#include "pbd/random.hpp"
#include "pbd/tensor_file.hpp"
#include "test_support.hpp"

using namespace pbd;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("pbd_io_" + name)).string();
}

// Writes an 8-bit RGB PNG directly through libpng.
void write_rgb(const std::string& path, std::size_t h, std::size_t w, const std::vector<png_byte>& rgb) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, const_cast<png_bytep>(rgb.data() + r * w * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST(Png, TensorPngTensorRoundTripWithinOneLevel) {
  Rng rng(101);
  const RealGrid g = pbd::testing::random_grid(rng, 13, 17, 0, 1);
  const auto path = temp_path("roundtrip.png");
  write_png(g, path);
  const RealGrid back = read_png(path);
  ASSERT_EQ(back.shape(), g.shape());
  EXPECT_LE(pbd::testing::max_abs_diff(back.data(), g.data()), 0.5 / 255.0 + 1e-12);
  const RealGrid stored = unstack_grids(load_tensor(save_tensor(stack_grids({back}))))[0];
  EXPECT_LE(pbd::testing::max_abs_diff(stored.data(), g.data()), 1.0 / 255.0);
  std::filesystem::remove(path);
}

TEST(Png, RgbIsChannelAveraged) {
  const auto path = temp_path("rgb.png");
  write_rgb(path, 1, 2, {255, 0, 0, 30, 60, 90});
  const RealGrid g = read_png(path);
  EXPECT_NEAR(g[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(g[1], 60.0 / 255.0, 1e-12);
  std::filesystem::remove(path);
}

TEST(Png, MissingAndMalformedFiles) {
  EXPECT_THROW(read_png(temp_path("does_not_exist.png")), Error);
  const auto path = temp_path("garbage.png");
  std::ofstream(path) << "not a png";
  EXPECT_THROW(read_png(path), Error);
  std::filesystem::remove(path);
}

TEST(Png, ValuesOutsideUnitRangeAreClamped) {
  const auto path = temp_path("clamp.png");
  write_png(RealGrid(1, 3, {-0.5, 0.5, 1.5}), path);
  const RealGrid g = read_png(path);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], 128.0 / 255.0, 1e-12);
  EXPECT_EQ(g[2], 1.0);
  std::filesystem::remove(path);
}
