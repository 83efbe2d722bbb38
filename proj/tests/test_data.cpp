#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ocular/dataset.hpp"
#include "ocular/image_io.hpp"
#include "oracles.hpp"

using namespace ocular;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pnm round trip is bit exact") {
    auto dir = temp_dir("ocular_test_pnm");

    ImageBuffer white;
    white.width = 1;
    white.height = 1;
    white.channels = 3;
    white.pixels = {255, 255, 255};
    write_pnm(dir / "white.ppm", white);
    ImageBuffer back = read_pnm(dir / "white.ppm");
    CHECK(back.channels == 3);
    CHECK(back.pixels == white.pixels);

    oracle::Rng rng(3);
    ImageBuffer gray;
    gray.width = 13;
    gray.height = 7;
    gray.channels = 1;
    for (int i = 0; i < 13 * 7; ++i)
        gray.pixels.push_back(static_cast<uint8_t>(rng.next_below(256)));
    write_pnm(dir / "g.pgm", gray);
    ImageBuffer gback = read_pnm(dir / "g.pgm");
    CHECK(gback.width == 13);
    CHECK(gback.height == 7);
    CHECK(gback.pixels == gray.pixels);

    // write(read(x)) is byte-identical to x
    write_pnm(dir / "g2.pgm", gback);
    CHECK(slurp(dir / "g.pgm") == slurp(dir / "g2.pgm"));
}

TEST_CASE("pnm reader rejects malformed headers") {
    auto dir = temp_dir("ocular_test_pnm_bad");

    std::ofstream(dir / "p7.pnm", std::ios::binary) << "P7\n1 1\n255\nx";
    CHECK_THROWS_WITH_AS(read_pnm(dir / "p7.pnm"), doctest::Contains("magic"), FormatError);

    std::ofstream(dir / "max.pgm", std::ios::binary) << "P5\n1 1\n65535\n\0\0";
    CHECK_THROWS_WITH_AS(read_pnm(dir / "max.pgm"), doctest::Contains("maxval"), FormatError);

    std::ofstream(dir / "trunc.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    CHECK_THROWS_WITH_AS(read_pnm(dir / "trunc.pgm"), doctest::Contains("truncated"), FormatError);

    CHECK_THROWS_AS(read_pnm(dir / "missing.pgm"), IoError);
}

TEST_CASE("pnm reader handles interleaved comments") {
    auto dir = temp_dir("ocular_test_pnm_comments");
    // Twin files: with and without comments, same raster.
    std::ofstream(dir / "plain.pgm", std::ios::binary) << "P5\n2 2\n255\nabcd";
    std::ofstream(dir / "comments.pgm", std::ios::binary)
        << "P5 # magic\n# a comment line\n 2 # width\n\t2\n# then maxval\n255\nabcd";
    ImageBuffer a = read_pnm(dir / "plain.pgm");
    ImageBuffer b = read_pnm(dir / "comments.pgm");
    CHECK(a.width == b.width);
    CHECK(a.height == b.height);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("annotation codec round trip and validation") {
    auto dir = temp_dir("ocular_test_anno");

    const auto path = dir / "a.txt";
    std::ofstream(path) << "0 0.5 0.5 0.2 0.3\n";
    std::vector<Annotation> annos = read_annotations(path);
    REQUIRE(annos.size() == 1);
    CHECK(annos[0].class_id == 0);
    CHECK(annos[0].box.cx == doctest::Approx(0.5));
    CHECK(annos[0].box.h == doctest::Approx(0.3));

    std::ofstream(dir / "empty.txt") << "";
    CHECK(read_annotations(dir / "empty.txt").empty());

    std::ofstream(dir / "badclass.txt") << "2 0.5 0.5 0.1 0.1\n";
    CHECK_THROWS_WITH_AS(read_annotations(dir / "badclass.txt"), doctest::Contains(":1"),
                         FormatError);

    std::ofstream(dir / "nan.txt") << "0 0.5 x 0.1 0.1\n";
    CHECK_THROWS_WITH_AS(read_annotations(dir / "nan.txt"), doctest::Contains("non-numeric"),
                         FormatError);

    std::ofstream(dir / "range.txt") << "0 0.5 0.5 0.1 1.5\n";
    CHECK_THROWS_AS(read_annotations(dir / "range.txt"), FormatError);

    // write -> read equals within the 6-decimal serialization.
    oracle::Rng rng(5);
    std::vector<Annotation> out;
    for (int i = 0; i < 20; ++i)
        out.push_back(Annotation{static_cast<int>(rng.next_below(2)),
                                 Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                     rng.uniform(0.01, 0.4), rng.uniform(0.01, 0.4)}});
    write_annotations(dir / "rt.txt", out);
    std::vector<Annotation> in = read_annotations(dir / "rt.txt");
    REQUIRE(in.size() == out.size());
    for (size_t i = 0; i < in.size(); ++i) {
        CHECK(in[i].class_id == out[i].class_id);
        CHECK(in[i].box.cx == doctest::Approx(out[i].box.cx).epsilon(1e-6));
        CHECK(in[i].box.w == doctest::Approx(out[i].box.w).epsilon(1e-6));
    }
}

TEST_CASE("make_splits: proportions, determinism, partition") {
    DatasetManifest m;
    for (int i = 0; i < 10; ++i)
        m.entries.push_back(ManifestEntry{"img" + std::to_string(i), "x.pgm", "x.txt",
                                          Split::train});
    make_splits(m, 7);
    CHECK(m.in_split(Split::train).size() == 4);
    CHECK(m.in_split(Split::test).size() == 4);
    CHECK(m.in_split(Split::val).size() == 2);

    DatasetManifest m2 = m;
    make_splits(m2, 7);
    for (size_t i = 0; i < m.entries.size(); ++i) CHECK(m.entries[i].split == m2.entries[i].split);

    DatasetManifest m5;
    for (int i = 0; i < 5; ++i)
        m5.entries.push_back(ManifestEntry{"i" + std::to_string(i), "x", "y", Split::train});
    make_splits(m5, 1);
    CHECK(m5.in_split(Split::train).size() == 2);
    CHECK(m5.in_split(Split::test).size() == 2);
    CHECK(m5.in_split(Split::val).size() == 1);

    DatasetManifest empty;
    CHECK_THROWS_AS(make_splits(empty, 1), Error);
}

TEST_CASE("manifest round trip") {
    auto dir = temp_dir("ocular_test_manifest");
    DatasetManifest m;
    m.seed = 99;
    m.entries = {
        {"img_000000", "img_000000.pgm", "img_000000.txt", Split::train},
        {"img_000001", "img_000001.pgm", "img_000001.txt", Split::test},
        {"img_000002", "img_000002.pgm", "img_000002.txt", Split::val},
    };
    write_manifest(dir / "m.tsv", m);
    DatasetManifest back = read_manifest(dir / "m.tsv");
    CHECK(back.seed == 99);
    REQUIRE(back.entries.size() == 3);
    CHECK(back.entries[1].split == Split::test);
    CHECK(back.entries[2].image_id == "img_000002");
    CHECK(back.base_dir == dir);

    std::ofstream(dir / "noheader.tsv") << "img\ta\tb\ttrain\n";
    CHECK_THROWS_WITH_AS(read_manifest(dir / "noheader.tsv"), doctest::Contains("seed"),
                         FormatError);
}

TEST_CASE("synthetic generator: determinism, containment, annotation invariants") {
    auto dir1 = temp_dir("ocular_test_synth1");
    auto dir2 = temp_dir("ocular_test_synth2");
    SynthOptions opt;
    opt.count = 12;
    opt.seed = 31;
    opt.image_size = 96;

    DatasetManifest m1 = synth_generate(opt, dir1);
    DatasetManifest m2 = synth_generate(opt, dir2);
    REQUIRE(m1.entries.size() == 12);

    for (size_t i = 0; i < m1.entries.size(); ++i) {
        // byte-identical images and annotations across runs with one seed
        CHECK(slurp(dir1 / m1.entries[i].image_path) == slurp(dir2 / m2.entries[i].image_path));
        CHECK(slurp(dir1 / m1.entries[i].annotation_path) ==
              slurp(dir2 / m2.entries[i].annotation_path));

        std::vector<Annotation> coarse = read_annotations(dir1 / m1.entries[i].annotation_path);
        REQUIRE(coarse.size() == 2);
        const Box& iris = coarse[0].box;
        const Box& peri = coarse[1].box;
        CHECK(coarse[0].class_id == 0);
        CHECK(coarse[1].class_id == 1);

        // every iris box lies inside its periocular box
        CHECK(iris.x0() >= peri.x0());
        CHECK(iris.y0() >= peri.y0());
        CHECK(iris.x1() <= peri.x1());
        CHECK(iris.y1() <= peri.y1());

        // coarse strictly contains the hidden fine region
        std::string fine_path = m1.entries[i].annotation_path;
        fine_path.replace(fine_path.find(".txt"), 4, ".fine.txt");
        std::vector<Annotation> fine = read_annotations(dir1 / fine_path);
        REQUIRE(fine.size() == 2);
        for (int k = 0; k < 2; ++k) {
            CHECK(coarse[k].box.x0() < fine[k].box.x0());
            CHECK(coarse[k].box.y0() < fine[k].box.y0());
            CHECK(coarse[k].box.x1() > fine[k].box.x1());
            CHECK(coarse[k].box.y1() > fine[k].box.y1());
        }

        // boxes respect the annotation invariants (read_annotations enforces
        // [0,1] and positive sizes; double-check edges stay inside)
        for (const Annotation& a : coarse) {
            CHECK(a.box.x0() >= 0.0);
            CHECK(a.box.y0() >= 0.0);
            CHECK(a.box.x1() <= 1.0);
            CHECK(a.box.y1() <= 1.0);
        }
    }

    // a different seed changes the pixels
    SynthOptions other = opt;
    other.seed = 32;
    auto dir3 = temp_dir("ocular_test_synth3");
    synth_generate(other, dir3);
    CHECK(slurp(dir1 / "img_000000.pgm") != slurp(dir3 / "img_000000.pgm"));

    CHECK_THROWS_AS(synth_generate(SynthOptions{0, 1, 96}, dir1), Error);
    CHECK_THROWS_AS(synth_generate(SynthOptions{1, 1, 32}, dir1), Error);
}

TEST_CASE("synthetic images look like the intended scene") {
    auto dir = temp_dir("ocular_test_synth_vis");
    SynthOptions opt;
    opt.count = 4;
    opt.seed = 7;
    opt.image_size = 96;
    DatasetManifest m = synth_generate(opt, dir);
    for (const ManifestEntry& e : m.entries) {
        ImageBuffer img = read_pnm(dir / e.image_path);
        std::vector<Annotation> fine =
            read_annotations(dir / (e.image_id + ".fine.txt"));
        const Box& iris = fine[0].box;
        const Box& peri = fine[1].box;
        auto px = [&](double nx, double ny) {
            return img.at(static_cast<int>(ny * opt.image_size),
                          static_cast<int>(nx * opt.image_size));
        };
        // patch center column, above the patch: background is darker than patch
        const int patch_sample = px(peri.cx, peri.cy + peri.h * 0.47);
        const int iris_sample = px(iris.cx + iris.w * 0.35, iris.cy);
        const int pupil_sample = px(iris.cx, iris.cy);
        CHECK(patch_sample > 120);    // lighter periocular patch
        CHECK(iris_sample < 100);     // dark iris
        CHECK(pupil_sample < iris_sample + 20);  // pupil darker still (noise margin)
    }
}
