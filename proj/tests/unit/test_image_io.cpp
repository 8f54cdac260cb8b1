#include <gtest/gtest.h>

#include <cstring>

#include "fixtures.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/image_io.hpp"
#include "lidarsim/ingest.hpp"

using namespace lidarsim;

namespace {

std::uint32_t le_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

TEST(ImageIo, LsiLayoutMatchesFormat) {
    PackedPlanes planes;
    planes.height = 1;
    planes.width = 2;
    planes.names = {"ab", "c"};
    planes.data = {1.0f, 2.0f, -0.5f, 0.25f};
    const auto bytes = encode_lsi(planes);
    ASSERT_EQ(bytes.size(), 4u + 12u + (4 + 2) + (4 + 1) + 16u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LSI1");
    EXPECT_EQ(le_u32(bytes, 4), 1u);
    EXPECT_EQ(le_u32(bytes, 8), 2u);
    EXPECT_EQ(le_u32(bytes, 12), 2u);
    EXPECT_EQ(le_u32(bytes, 16), 2u);
    EXPECT_EQ(std::string(bytes.begin() + 20, bytes.begin() + 22), "ab");
    float third;
    std::memcpy(&third, bytes.data() + 27 + 8, 4);
    EXPECT_EQ(third, -0.5f);

    std::size_t offset = 0;
    const auto back = decode_lsi(bytes, offset);
    EXPECT_EQ(offset, bytes.size());
    EXPECT_EQ(back.names, planes.names);
    EXPECT_EQ(back.data, planes.data);
}

TEST(ImageIo, LsiRejectsCorruptInput) {
    PackedPlanes planes{2, 2, {"x"}, {1, 2, 3, 4}};
    auto bytes = encode_lsi(planes);
    std::size_t offset = 0;
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(decode_lsi(truncated, offset), Error);
    offset = 0;
    bytes[0] = 'X';
    EXPECT_THROW(decode_lsi(bytes, offset), Error);
    PackedPlanes bad{2, 2, {"x"}, {1, 2, 3}};
    EXPECT_THROW(encode_lsi(bad), Error);
}

TEST(ImageIo, LsiFileRoundTripOfImage) {
    PointCloud cloud;
    cloud.points = {Vec3f(10, 0, -1), Vec3f(5, 5, -0.5f), Vec3f(-8, 2, -2)};
    cloud.intensity = {0.1f, 0.5f, 0.9f};
    cloud.label = std::vector<std::uint16_t>{40, 10, 50};
    ProjectionConfig cfg;
    cfg.height = 16;
    cfg.width = 64;
    const auto img = spherical_project(cloud, cfg);
    fixtures::TempDir dir("imageio");
    write_lsi(dir / "img.lsi", pack_image(img));
    const auto back = read_lsi(dir / "img.lsi");
    EXPECT_EQ(back.height, 16u);
    EXPECT_EQ(back.width, 64u);
    ASSERT_EQ(back.names.size(), img.channels.size());
    std::size_t c = 0;
    for (const auto& [name, plane] : img.channels) {
        EXPECT_EQ(back.names[c], name);
        EXPECT_TRUE(std::equal(plane.begin(), plane.end(), back.data.begin() + c * plane.size()));
        ++c;
    }
}

TEST(ImageIo, PgmRoundTrip) {
    fixtures::TempDir dir("imageio");
    write_pgm16(dir / "a.pgm", 2, 3, {0, 1, 256, 65535, 1000, 7});
    const auto a = read_pgm(dir / "a.pgm");
    EXPECT_EQ(a.maxval, 65535);
    EXPECT_EQ(a.samples, (std::vector<std::uint16_t>{0, 1, 256, 65535, 1000, 7}));
    // 16-bit samples are stored big-endian.
    const auto raw = fixtures::read_bytes(dir / "a.pgm");
    EXPECT_EQ(raw[raw.size() - 2], 0);
    EXPECT_EQ(raw[raw.size() - 1], 7);

    write_pgm8(dir / "b.pgm", 1, 2, {0, 255});
    const auto b = read_pgm(dir / "b.pgm");
    EXPECT_EQ(b.maxval, 255);
    EXPECT_EQ(b.height, 1);
    EXPECT_EQ(b.width, 2);
    EXPECT_EQ(b.samples, (std::vector<std::uint16_t>{0, 255}));
    EXPECT_THROW(write_pgm8(dir / "c.pgm", 2, 2, {1}), Error);
}

TEST(ImageIo, ExportWritesPlanesAndSidecar) {
    PointCloud cloud;
    cloud.points = {Vec3f(10, 0, -1)};
    cloud.intensity = {0.5f};
    ProjectionConfig cfg;
    cfg.height = 8;
    cfg.width = 32;
    const auto img = spherical_project(cloud, cfg);
    fixtures::TempDir dir("imageio");
    export_spherical_image(dir / "frame", img);
    EXPECT_TRUE(std::filesystem::exists(dir / "frame.lsi"));
    const auto sidecar = fixtures::read_text(dir / "frame.json");
    for (const auto& [name, plane] : img.channels) {
        const auto pgm = read_pgm(dir / ("frame_" + name + ".pgm"));
        EXPECT_EQ(pgm.samples.size(), plane.size());
        EXPECT_NE(sidecar.find("\"" + name + "\""), std::string::npos) << name;
    }
    const auto mask = read_pgm(dir / "frame_mask.pgm");
    std::size_t on = 0;
    for (auto s : mask.samples) on += s == 65535;
    EXPECT_EQ(on, 1u);
}
