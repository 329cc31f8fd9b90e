#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "annotation_server.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "expect.hpp"
#include "httplib.h"
#include "json.hpp"
#include "manifest.hpp"
#include "run_config.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/audio.hpp"
#include "speechconf/features.hpp"
#include "speechconf/textio.hpp"

using namespace speechconf;
using nlohmann::json;
using testing::code_of;
using testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = haystack.find(needle); p != std::string::npos; p = haystack.find(needle, p + 1)) ++n;
  return n;
}

AudioClip voiced_clip(const std::string& id, double f0, double seconds) {
  AudioClip c;
  c.id = id;
  const auto n = static_cast<std::size_t>(seconds * kCanonicalRate);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kCanonicalRate;
    const double env = 0.5 + 0.5 * std::sin(2 * M_PI * 3.0 * t);
    c.samples.push_back(0.3 * env * (std::sin(2 * M_PI * f0 * t) + 0.5 * std::sin(4 * M_PI * f0 * t)));
  }
  return c;
}

}  // namespace

TEST_CASE("run config parser") {
  const auto c = cli::parse_run_config("# comment\npseudo.tau = 0.9\nhybrid.class_weights = 1,2,1\ncv.arms = gt_only,proposed\n");
  CHECK(c.pseudo.tau == 0.9);
  CHECK(c.hybrid.class_weights[1] == 2.0);
  CHECK(c.arms.size() == 2);

  SUBCASE("unknown key names its line") {
    try {
      cli::parse_run_config("pseudo.tau = 0.8\nhybrid.lamda_fv = 0.3\n");
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvalidConfig);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
      CHECK(std::string(e.what()).find("hybrid.lamda_fv") != std::string::npos);
    }
  }
  SUBCASE("out-of-range values") {
    CHECK(code_of([] { cli::parse_run_config("pseudo.tau = 1.5\n"); }) == Errc::InvalidConfig);
    CHECK(code_of([] { cli::parse_run_config("pseudo.tau = abc\n"); }) == Errc::InvalidConfig);
    CHECK(code_of([] { cli::parse_run_config("cv.folds = 1\n"); }) == Errc::InvalidConfig);
    CHECK(code_of([] { cli::parse_run_config("no equals sign\n"); }) == Errc::InvalidConfig);
  }
  SUBCASE("resolved config parses back to the same values") {
    const auto again = cli::parse_run_config(cli::resolved_run_config(c));
    CHECK(cli::resolved_run_config(again) == cli::resolved_run_config(c));
  }
}

TEST_CASE("verb dispatch and exit codes") {
  CHECK(invoke({}).code == 1);
  const auto unknown = invoke({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("\"code\":\"UnknownVerb\"") != std::string::npos);
  CHECK(invoke({"foldplan", "--no-such-flag"}).code == 1);
  CHECK(invoke({"cv", "--help"}).code == 0);
  const auto missing = invoke({"cv", "--config", "/nonexistent/run.cfg"});
  CHECK(missing.code == 1);
  CHECK(json::parse(missing.err)["code"] == "NotFound");
}

TEST_CASE("synthetic dataset through foldplan, cv, audit and report") {
  TempDir tmp("speechconf_cli");
  const auto dir = tmp.path().string();
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  REQUIRE(invoke({"synth", "--out", dir, "--n-gt", "45", "--n-pool", "150", "--k", "3"}).code == 0);

  const auto a = invoke({"foldplan", "--manifest", dir + "/manifest.json", "--k", "3", "--out", dir + "/a.json"});
  const auto b = invoke({"foldplan", "--manifest", dir + "/manifest.json", "--k", "3", "--out", dir + "/b.json"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.rfind("checksum ", 0) == 0);
  CHECK(textio::read_file(dir + "/a.json") == textio::read_file(dir + "/b.json"));

  const auto cv = invoke({"cv", "--config", dir + "/run.cfg", "--arms", "gt_only,proposed", "--out", dir + "/cv"});
  INFO(cv.err);
  REQUIRE(cv.code == 0);
  CHECK(count_of(cv.out, "macro-F1") == 2);
  CHECK(cv.out.find("gt_only:") != std::string::npos);
  CHECK(cv.out.find("proposed:") != std::string::npos);
  CHECK(cv.out.find("leakage audit: PASS") != std::string::npos);
  for (const auto* f : {"cv_report.json", "folds.csv", "summary.csv", "artifacts.json", "audit.txt",
                        "resolved_config.cfg", "provenance.json", "macro_f1.svg"}) {
    CHECK_MESSAGE(std::filesystem::exists(tmp / ("cv/" + std::string(f))), f);
  }
  const auto prov = json::parse(textio::read_file(tmp / "cv/provenance.json"));
  CHECK(prov["fold_plan_checksum"].get<std::string>().size() == 64);
  CHECK(prov["embedding_store_sha256"] == textio::sha256_hex(textio::read_binary(tmp / "embeddings.bin")));
  const auto resolved = cli::read_run_config(tmp / "cv/resolved_config.cfg");
  CHECK(resolved.arms.size() == 2);

  const auto audit = invoke({"audit", "--plan", dir + "/folds.json", "--artifacts", dir + "/cv/artifacts.json", "--mutation-test"});
  CHECK(audit.code == 0);
  CHECK(audit.out.find("mutation test: 12/12 exact") != std::string::npos);

  const auto rep = invoke({"report", "--cv", dir + "/cv/cv_report.json", "--out", dir + "/rep"});
  CHECK(rep.code == 0);
  CHECK(textio::read_file(tmp / "rep/summary.csv") == textio::read_file(tmp / "cv/summary.csv"));

  SUBCASE("per-fold verbs") {
    REQUIRE(invoke({"train-labeller", "--manifest", dir + "/manifest.json", "--fold", "1", "--config", dir + "/run.cfg",
                 "--out", dir + "/lab.ckpt"}).code == 0);
    const auto ps = invoke({"pseudo", "--manifest", dir + "/manifest.json", "--fold", "1", "--labeller",
                         dir + "/lab.ckpt", "--out", dir + "/ps.csv"});
    REQUIRE(ps.code == 0);
    CHECK(ps.out.find("of 150") != std::string::npos);
    const auto wrong_fold = invoke({"train-hybrid", "--manifest", dir + "/manifest.json", "--fold", "0", "--pseudo",
                                 dir + "/ps.csv", "--out", dir + "/h.ckpt"});
    CHECK(wrong_fold.code == 1);
    const auto hy = invoke({"train-hybrid", "--manifest", dir + "/manifest.json", "--fold", "1", "--pseudo",
                         dir + "/ps.csv", "--config", dir + "/run.cfg", "--out", dir + "/h.ckpt"});
    CHECK(hy.code == 0);
    CHECK(hy.out.find("test macro-F1") != std::string::npos);
    CHECK(invoke({"train-labeller", "--manifest", dir + "/manifest.json", "--fold", "7", "--out", dir + "/x"}).code == 1);
  }
}

TEST_CASE("preprocess and extract from audio") {
  TempDir tmp("speechconf_extract");
  const auto dir = tmp.path().string();
  std::filesystem::create_directories(tmp / "raw");
  auto a = voiced_clip("c1", 140.0, 5.5);
  auto b = voiced_clip("c2", 220.0, 6.0);
  // non-canonical rate exercises resampling
  b.samples = resample(b.samples, kCanonicalRate, 22050);
  b.sample_rate = 22050;
  write_wav_pcm16(tmp / "raw/c1.wav", a);
  write_wav_pcm16(tmp / "raw/c2.wav", b);
  textio::write_file(tmp / "aux.csv",
                     "id,disf_block,disf_prolong,disf_interj,disf_wordrep,disf_soundrep,stress\n"
                     "c1,0.1,0.2,0.3,0.4,0.5,0.6\nc2,0,0,0,0,0,1\n");
  cli::DatasetManifest m;
  m.auxiliary = "aux.csv";
  m.clips = {{"c1", "raw/c1.wav", cli::SplitRole::Labelled}, {"c2", "raw/c2.wav", cli::SplitRole::Labelled}};
  cli::write_manifest(tmp / "manifest.json", m);

  const auto pre = invoke({"preprocess", "--manifest", dir + "/manifest.json", "--out", dir + "/wav"});
  INFO(pre.err);
  REQUIRE(pre.code == 0);
  CHECK(load_clip(tmp / "wav/c2.wav").sample_rate == kCanonicalRate);

  const auto ex = invoke({"extract", "--manifest", dir + "/manifest.json", "--audio-dir", dir + "/wav", "--out",
                       dir + "/features.csv"});
  INFO(ex.err);
  REQUIRE(ex.code == 0);
  const auto fv = read_feature_store(tmp / "features.csv");
  REQUIRE(fv.size() == 2);
    CHECK(fv[0].disfluency_probs[1] == doctest::Approx(0.2));
  CHECK(fv[1].stress_prob == 1.0);

  SUBCASE("missing WAV names the clip and exits 1") {
    std::filesystem::remove(tmp / "raw/c2.wav");
    const auto r = invoke({"extract", "--manifest", dir + "/manifest.json", "--out", dir + "/f2.csv"});
    CHECK(r.code == 1);
    CHECK(r.err.find("c2") != std::string::npos);
    CHECK(json::parse(r.err)["code"] == "NotFound");
    CHECK(invoke({"preprocess", "--manifest", dir + "/manifest.json", "--out", dir + "/w2"}).code == 1);
  }
  SUBCASE("auxiliary probability out of range") {
    textio::write_file(tmp / "aux.csv",
                       "id,disf_block,disf_prolong,disf_interj,disf_wordrep,disf_soundrep,stress\n"
                       "c1,0.1,0.2,0.3,0.4,1.5,0.6\nc2,0,0,0,0,0,1\n");
    const auto r = invoke({"extract", "--manifest", dir + "/manifest.json", "--audio-dir", dir + "/wav", "--out",
                        dir + "/f3.csv"});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["code"] == "ProbabilityOutOfRange");
  }
}

TEST_CASE("calibrate verb") {
  TempDir tmp("speechconf_cal");
  textio::write_file(tmp / "logits.csv", "id,z_0,z_1,z_2,label\na,2,0,0,0\nb,0,3,0,1\nc,0,0,1,2\nd,1,0.5,0,1\n");
  const auto r = invoke({"calibrate", "--logits", (tmp / "logits.csv").string()});
  REQUIRE(r.code == 0);
  const auto lines = textio::split(r.out, '\n');
  CHECK(lines[0].rfind("# temperature=", 0) == 0);
  CHECK(lines[1] == "id,p_0,p_1,p_2");
  const auto row = textio::split_csv_line(lines[2]);
  REQUIRE(row.size() == 4);
  double sum = 0;
  for (std::size_t k = 1; k < row.size(); ++k) sum += textio::parse_double(row[k]);
  CHECK(sum == doctest::Approx(1.0));
  textio::write_file(tmp / "bad.csv", "id,z_0,z_1,label\na,1,0,5\n");
  CHECK(invoke({"calibrate", "--logits", (tmp / "bad.csv").string()}).code == 1);
}

TEST_CASE("aggregate verb") {
  TempDir tmp("speechconf_agg");
  std::string jsonl;
  const char* values[] = {"low", "medium", "high"};
  double ts = 1.0;
  for (int clip = 0; clip < 6; ++clip) {
    for (int r = 0; r < 3; ++r) {
      const int v = (clip + (r == 2 && clip == 4 ? 1 : 0)) % 3;
      jsonl += annotation_to_json({"clip" + std::to_string(clip), "r" + std::to_string(r), parse_rating(values[v]).value(), ts++}) + "\n";
    }
  }
  textio::write_file(tmp / "ann.jsonl", jsonl);
  const auto r = invoke({"aggregate", "--annotations", (tmp / "ann.jsonl").string(), "--out", (tmp / "out").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("ICC(2,k)") != std::string::npos);
  CHECK(read_consensus_csv(tmp / "out/consensus.csv").size() == 6);
  const auto report = json::parse(textio::read_file(tmp / "out/annotation_report.json"));
  CHECK(report["icc_2k"]["n_complete"] == 6);
  CHECK(std::filesystem::exists(tmp / "out/rater_matrix.csv"));
}

namespace {

struct ServerFixture {
  TempDir tmp{"speechconf_http"};
  std::unique_ptr<cli::AnnotationServer> server;
  std::thread thread;
  int port = 0;

  ServerFixture() {
    std::filesystem::create_directories(tmp / "wav");
    cli::DatasetManifest m;
    for (int i = 0; i < 5; ++i) {
      const auto id = "clip" + std::to_string(i);
      m.clips.push_back({id, "wav/" + id + ".wav", cli::SplitRole::Labelled});
      write_wav_pcm16(tmp / ("wav/" + id + ".wav"), voiced_clip(id, 150.0, 0.2));
    }
    m.clips.push_back({"pool0", "", cli::SplitRole::Pool});
    cli::write_manifest(tmp / "manifest.json", m);
    server = std::make_unique<cli::AnnotationServer>(cli::read_manifest(tmp / "manifest.json"), tmp / "ann.jsonl");
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->run(); });
  }
  ~ServerFixture() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
  int post(const std::string& clip, const std::string& rater, const std::string& value) const {
    auto c = client();
    const auto r = c.Post("/api/labels", json{{"clip_id", clip}, {"rater_id", rater}, {"value", value}}.dump(),
                          "application/json");
    return r ? r->status : -1;
  }
};

}  // namespace

TEST_CASE("annotation HTTP API") {
  ServerFixture fx;
  auto c = fx.client();

  SUBCASE("clips lists labelled clips only") {
    const auto r = c.Get("/api/clips");
    REQUIRE(r);
    const auto j = json::parse(r->body);
    REQUIRE(j.size() == 5);
    CHECK(j[0]["id"] == "clip0");
    const auto audio = c.Get("/api/clips/clip3/audio");
    REQUIRE(audio);
    CHECK(audio->status == 200);
    CHECK(audio->get_header_value("Content-Type") == "audio/wav");
    CHECK(audio->body.substr(0, 4) == "RIFF");
    CHECK(c.Get("/api/clips/nope/audio")->status == 404);
  }

  SUBCASE("label round trip through export") {
    CHECK(fx.post("clip2", "alice", "high") == 201);
    const auto r = c.Get("/api/export");
    REQUIRE(r);
    CHECK(r->get_header_value("Content-Type").find("text/csv") == 0);
    const auto lines = textio::split(r->body, '\n');
    CHECK(lines[0] == "clip_id,alice");
    CHECK(r->body.find("clip2,2\n") != std::string::npos);
    const auto stored = read_annotations_jsonl(fx.tmp / "ann.jsonl");
    REQUIRE(stored.size() == 1);
    CHECK(stored[0].value == Rating::High);
  }

  SUBCASE("error statuses") {
    CHECK(fx.post("clip1", "alice", "very_high") == 400);
    CHECK(fx.post("ghost", "alice", "low") == 404);
    CHECK(c.Post("/api/labels", "{not json", "application/json")->status == 409);
    CHECK(c.Post("/api/labels", R"({"clip_id":"clip1","value":"low"})", "application/json")->status == 409);
    CHECK(fx.post("clip1", "", "low") == 409);
    CHECK(c.Get("/api/next")->status == 400);
    CHECK(fx.server->records().empty());
  }

  SUBCASE("next, progress and latest-wins") {
    auto next = json::parse(c.Get("/api/next?rater=bob")->body);
    CHECK(next["clip_id"] == "clip0");
    CHECK(next["remaining"] == 5);
    CHECK(fx.post("clip0", "bob", "low") == 201);
    CHECK(fx.post("clip1", "bob", "medium") == 201);
    CHECK(fx.post("clip2", "bob", "not_clear") == 201);
    CHECK(fx.post("clip0", "carol", "medium") == 201);
    // carol is least-annotated elsewhere: clip3 and clip4 have zero labels
    CHECK(json::parse(c.Get("/api/next?rater=carol")->body)["clip_id"] == "clip3");
    next = json::parse(c.Get("/api/next?rater=bob")->body);
    CHECK(next["clip_id"] == "clip3");
    CHECK(next["remaining"] == 2);

    const auto progress = json::parse(c.Get("/api/progress")->body);
    CHECK(progress["total_clips"] == 5);
    CHECK(progress["raters"]["bob"]["done"] == 3);
    CHECK(progress["raters"]["carol"]["done"] == 1);

    CHECK(fx.post("clip0", "bob", "high") == 201);
    const auto m = build_rater_matrix(read_annotations_jsonl(fx.tmp / "ann.jsonl"));
    const auto csv = c.Get("/api/export")->body;
    CHECK(csv.find("clip0,2,1\n") != std::string::npos);
    CHECK(csv.find("clip2,NC,\n") != std::string::npos);
    CHECK(rater_matrix_csv(m) == csv);
    CHECK(json::parse(c.Get("/api/progress")->body)["raters"]["bob"]["done"] == 3);
  }

  SUBCASE("concurrent writers on one clip are all recorded") {
    constexpr int kRaters = 8;
    std::atomic<int> created{0};
    std::vector<std::thread> writers;
    for (int r = 0; r < kRaters; ++r) {
      writers.emplace_back([&, r] {
        if (fx.post("clip4", "r" + std::to_string(r), "medium") == 201) ++created;
      });
    }
    for (auto& t : writers) t.join();
    CHECK(created == kRaters);
    const auto stored = read_annotations_jsonl(fx.tmp / "ann.jsonl");
    CHECK(stored.size() == kRaters);
    std::set<double> stamps;
    for (const auto& rec : stored) stamps.insert(rec.ts);
    CHECK(stamps.size() == kRaters);
    CHECK(json::parse(c.Get("/api/clips")->body)[4]["annotations"] == kRaters);
  }

  SUBCASE("existing store is reloaded") {
    CHECK(fx.post("clip1", "dana", "low") == 201);
    cli::AnnotationServer again(cli::read_manifest(fx.tmp / "manifest.json"), fx.tmp / "ann.jsonl");
    CHECK(again.records().size() == 1);
  }
}
