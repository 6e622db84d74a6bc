// Command-line front end: train a model on image pairs, serve it over TCP
// for keyless encrypted evaluation, run a client diagnosis, sweep the
// fixed-point precision, or print the closed-form cost model.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "keyless/keyless.hpp"

namespace {

using namespace keyless;

volatile std::sig_atomic_t g_stop = 0;

void handle_stop(int) { g_stop = 1; }

std::vector<std::pair<std::size_t, Activation>> parse_hidden(
    const std::string& spec) {
  std::vector<std::pair<std::size_t, Activation>> hidden;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string entry = spec.substr(pos, comma - pos);
    const std::size_t colon = entry.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= entry.size()) {
      throw ModelError("bad hidden layer entry '" + entry +
                       "', expected <width>:<activation>");
    }
    hidden.emplace_back(std::stoul(entry.substr(0, colon)),
                        activation_from_string(entry.substr(colon + 1)));
    pos = comma + 1;
  }
  return hidden;
}

std::vector<std::size_t> parse_sizes(const std::string& spec) {
  std::vector<std::size_t> sizes;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    sizes.push_back(std::stoul(spec.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return sizes;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& spec) {
  const std::size_t colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= spec.size()) {
    throw IoError("bad server address '" + spec + "', expected host:port");
  }
  return {spec.substr(0, colon),
          static_cast<std::uint16_t>(std::stoul(spec.substr(colon + 1)))};
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset_path;
  std::uint64_t synth_seed = 42;
  std::size_t subjects = 40;
  std::size_t images_per_subject = 6;
  std::size_t side = 32;
  std::string save_dataset_path;
  std::string hidden = "128:sigmoid,32:relu";
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::size_t epochs = 40;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  double train_fraction = 0.5;
  std::string out_path;
};

int run_train(const TrainArgs& a) {
  Dataset data;
  if (!a.dataset_path.empty()) {
    data = load_dataset(a.dataset_path);
  } else {
    data = synth_dataset(a.synth_seed, a.subjects, a.images_per_subject,
                         a.side);
  }
  if (!a.save_dataset_path.empty()) save_dataset(data, a.save_dataset_path);

  const auto [train_set, test_set] = split_by_subject(data, a.train_fraction);
  MlpModel model = init_model(data.side * data.side, parse_hidden(a.hidden),
                              2, a.seed);
  TrainConfig cfg;
  cfg.opt = a.optimizer == "rmsprop" ? Optimizer::rmsprop : Optimizer::adam;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  const TrainResult result = train(model, train_set, cfg);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::printf("epoch,%zu,%.6f\n", e + 1, result.epoch_loss[e]);
  }
  const EvalMetrics m = evaluate(result.model, test_set);
  std::printf("test,accuracy,%.4f,precision,%.4f,recall,%.4f,f1,%.4f\n",
              m.accuracy, m.precision, m.recall, m.f1);
  if (!a.out_path.empty()) save_model(result.model, a.out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string model_path;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string credentials_path;
  int frac_bits = 7;
  int int_bits = 8;
  int min_key_bits = 256;
  std::optional<std::uint64_t> shuffle_seed;
};

void print_session_report(const SessionReport& rep,
                          const std::vector<std::size_t>& sizes) {
  std::printf("session,uid,%s,images,%zu,clean_close,%d,error,%s\n",
              rep.uid.c_str(), rep.images, rep.clean_close ? 1 : 0,
              rep.error.c_str());
  for (std::size_t i = 0; i < rep.image_counters.size(); ++i) {
    const std::size_t kb = rep.image_key_bits[i];
    const ReconcileReport rec =
        reconcile(rep.image_counters[i], predict_cost(sizes, kb));
    std::printf("image,%zu,key_bits,%zu,reconcile_ok,%d,server_exp_share,"
                "%.4f,compute_ns,%llu\n",
                i + 1, kb, rec.ok ? 1 : 0, rec.server_exp_share,
                static_cast<unsigned long long>(rep.image_compute_ns[i]));
    if (!rec.ok) std::fputs(rec.csv().c_str(), stderr);
  }
  std::fflush(stdout);
}

int run_serve(const ServeArgs& a) {
  const MlpModel model = load_model(a.model_path);
  CodecConfig codec;
  codec.frac_bits = a.frac_bits;
  codec.int_bits = a.int_bits;
  codec.modulus_bits = a.min_key_bits;
  const QuantizedMlp qm = quantize_model(model, codec);
  const std::vector<std::size_t> sizes = layer_sizes(qm);
  const Credentials creds = Credentials::load(a.credentials_path);

  ServerConfig cfg;
  cfg.codec = codec;
  cfg.min_key_bits = a.min_key_bits;
  cfg.shuffle_seed = a.shuffle_seed;
  TcpServer server(qm, creds, cfg);
  server.on_report = [&sizes](const SessionReport& rep) {
    print_session_report(rep, sizes);
  };

  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  server.start(a.host, a.port);
  std::printf("listening,%s,%u\n", a.host.c_str(), unsigned(server.port()));
  std::fflush(stdout);
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string server = "127.0.0.1:7700";
  std::string uid;
  std::string pwd;
  std::string image1_path;
  std::string image2_path;
  std::string dataset_path;
  int subject = -1;
  std::size_t key_bits = 1024;
  int frac_bits = 7;
  int int_bits = 8;
  std::optional<std::uint64_t> seed;
};

std::pair<std::vector<double>, std::vector<double>> pick_images(
    const DiagnoseArgs& a) {
  if (!a.image1_path.empty()) {
    const Dataset d1 = load_dataset(a.image1_path);
    const Dataset d2 = load_dataset(a.image2_path);
    if (d1.size() == 0 || d2.size() == 0) {
      throw IoError("image files must each hold at least one image");
    }
    return {d1.images[0], d2.images[0]};
  }
  const Dataset d = load_dataset(a.dataset_path);
  std::vector<std::vector<double>> found;
  for (std::size_t i = 0; i < d.size() && found.size() < 2; ++i) {
    if (d.subject_ids[i] == a.subject) found.push_back(d.images[i]);
  }
  if (found.size() < 2) {
    throw IoError("subject " + std::to_string(a.subject) +
                  " needs at least two images in the dataset");
  }
  return {found[0], found[1]};
}

int run_diagnose(const DiagnoseArgs& a) {
  const auto [img1, img2] = pick_images(a);
  const auto [host, port] = parse_endpoint(a.server);

  ClientConfig cfg;
  cfg.uid = a.uid;
  cfg.pwd = a.pwd;
  cfg.codec.frac_bits = a.frac_bits;
  cfg.codec.int_bits = a.int_bits;
  cfg.codec.modulus_bits = int(a.key_bits);
  cfg.key_bits = a.key_bits;
  cfg.seed = a.seed;

  auto ch = TcpChannel::connect_to(host, port);
  const DiagnosisResult diag = client_run_diagnosis(*ch, img1, img2, cfg);

  switch (diag.decision) {
    case Decision::d1_before:
      std::printf("before=D1 after=D2 R1=%.6f R2=%.6f\n", diag.r1, diag.r2);
      break;
    case Decision::d2_before:
      std::printf("before=D2 after=D1 R1=%.6f R2=%.6f\n", diag.r1, diag.r2);
      break;
    case Decision::indeterminate:
      std::printf("indeterminate R1=%.6f R2=%.6f\n", diag.r1, diag.r2);
      break;
  }
  std::uint64_t bytes_out = diag.session_bytes_out;
  std::uint64_t bytes_in = diag.session_bytes_in;
  const ImageRunResult* images[2] = {&diag.image1, &diag.image2};
  for (int i = 0; i < 2; ++i) {
    const CostCounters& c = images[i]->counters;
    std::printf("image,%d,bigints_out,%llu,bigints_in,%llu,modexp,%llu,"
                "modmul,%llu,bytes_out,%llu,bytes_in,%llu\n",
                i + 1, static_cast<unsigned long long>(c.bigints_c2s),
                static_cast<unsigned long long>(c.bigints_s2c),
                static_cast<unsigned long long>(c.client_modexp),
                static_cast<unsigned long long>(c.client_modmul),
                static_cast<unsigned long long>(c.bytes_c2s),
                static_cast<unsigned long long>(c.bytes_s2c));
    bytes_out += c.bytes_c2s;
    bytes_in += c.bytes_s2c;
  }
  std::printf("session,bytes_out,%llu,bytes_in,%llu\n",
              static_cast<unsigned long long>(bytes_out),
              static_cast<unsigned long long>(bytes_in));
  return 0;
}

// ---------------------------------------------------------------------------
// sweep-precision
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string model_path;
  std::string dataset_path;
  int fl_min = 1;
  int fl_max = 10;
  std::size_t key_bits = 256;
  double train_fraction = 0.5;
};

int run_sweep(const SweepArgs& a) {
  const MlpModel model = load_model(a.model_path);
  const Dataset data = load_dataset(a.dataset_path);
  const auto [train_set, test_set] = split_by_subject(data, a.train_fraction);
  (void)train_set;

  std::printf(
      "frac_bits,encrypted_accuracy,oracle_accuracy,plain_accuracy,"
      "plain_agreement\n");
  for (int fl = a.fl_min; fl <= a.fl_max; ++fl) {
    CodecConfig codec;
    codec.frac_bits = fl;
    codec.modulus_bits = int(a.key_bits);
    const QuantizedMlp qm = quantize_model(model, codec);

    // One in-process session per precision; every image crosses the full
    // encrypted protocol.
    auto [server_end, client_end] = LoopbackChannel::make_pair();
    Credentials creds;
    creds.add("sweep", "sweep");
    ServerConfig scfg;
    scfg.codec = codec;
    scfg.min_key_bits = int(a.key_bits);
    ServerSession session(qm, creds, scfg);
    SessionReport report;
    std::thread server(
        [&, sch = server_end.get()] { report = session.run(*sch); });

    ClientConfig ccfg;
    ccfg.uid = "sweep";
    ccfg.pwd = "sweep";
    ccfg.codec = codec;
    ccfg.key_bits = a.key_bits;
    SystemRandom rng;

    std::size_t enc_ok = 0, oracle_ok = 0, plain_ok = 0, agree = 0;
    {
      write_frame(*client_end, Hello{ccfg.uid, ccfg.pwd});
      const auto resp = read_frame(*client_end);
      if (!resp || !std::holds_alternative<HelloOk>(*resp)) {
        throw ProtocolError("sweep session refused");
      }
      for (std::size_t i = 0; i < test_set.size(); ++i) {
        const std::vector<double>& img = test_set.images[i];
        const ImageRunResult res =
            client_run_image(*client_end, img, ccfg, rng);
        const int enc_label = int(std::max_element(res.probabilities.begin(),
                                                   res.probabilities.end()) -
                                  res.probabilities.begin());
        const QuantizedForward oracle = forward_quantized(qm, img);
        const int oracle_label =
            int(std::max_element(oracle.probabilities.begin(),
                                 oracle.probabilities.end()) -
                oracle.probabilities.begin());
        const int plain_label = predict_label(model, img);
        const int truth = test_set.labels[i];
        enc_ok += enc_label == truth;
        oracle_ok += oracle_label == truth;
        plain_ok += plain_label == truth;
        agree += enc_label == plain_label;
      }
      write_frame(*client_end, Close{});
      client_end->close();
    }
    server.join();
    if (!report.error.empty()) {
      throw ProtocolError("sweep session failed: " + report.error);
    }
    const double n = double(test_set.size());
    std::printf("%d,%.4f,%.4f,%.4f,%.4f\n", fl, enc_ok / n, oracle_ok / n,
                plain_ok / n, agree / n);
    std::fflush(stdout);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict-cost
// ---------------------------------------------------------------------------

int run_predict(const std::string& layers, std::size_t key_bits) {
  const std::vector<std::size_t> sizes = parse_sizes(layers);
  const CostPrediction p = predict_cost(sizes, key_bits);
  std::printf("metric,value\n");
  std::printf("table_server_weighted,%llu\n",
              static_cast<unsigned long long>(p.compute.table_server_weighted));
  std::printf("exact_server_modexp,%llu\n",
              static_cast<unsigned long long>(p.compute.exact_server_modexp));
  std::printf("exact_server_modmul,%llu\n",
              static_cast<unsigned long long>(p.compute.exact_server_modmul));
  std::printf("table_client_modexp,%llu\n",
              static_cast<unsigned long long>(p.compute.table_client_modexp));
  std::printf("table_client_modmul,%llu\n",
              static_cast<unsigned long long>(p.compute.table_client_modmul));
  std::printf("exact_client_modexp,%llu\n",
              static_cast<unsigned long long>(p.compute.exact_client_modexp));
  std::printf("exact_client_modmul,%llu\n",
              static_cast<unsigned long long>(p.compute.exact_client_modmul));
  for (std::size_t i = 0; i < p.compute.per_layer.size(); ++i) {
    std::printf("layer%zu_server_modexp,%llu\n", i + 1,
                static_cast<unsigned long long>(
                    p.compute.per_layer[i].server_modexp));
  }
  std::printf("bigints_s2c,%llu\n",
              static_cast<unsigned long long>(p.comm.bigints_s2c));
  std::printf("bigints_c2s,%llu\n",
              static_cast<unsigned long long>(p.comm.bigints_c2s));
  std::printf("predicted_bits,%llu\n",
              static_cast<unsigned long long>(p.comm.predicted_bits));
  const double share =
      double(p.compute.exact_server_modexp) /
      double(p.compute.exact_server_modexp + p.compute.exact_client_modexp);
  std::printf("server_exp_share,%.4f\n", share);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyless encrypted neural inference"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train an ordering model on image pairs");
  train_cmd->add_option("--dataset", train_args.dataset_path,
                        "Load a dataset instead of synthesizing one");
  train_cmd->add_option("--synth-seed", train_args.synth_seed);
  train_cmd->add_option("--subjects", train_args.subjects);
  train_cmd->add_option("--images-per-subject", train_args.images_per_subject);
  train_cmd->add_option("--side", train_args.side);
  train_cmd->add_option("--save-dataset", train_args.save_dataset_path,
                        "Write the training dataset to this path");
  train_cmd->add_option("--hidden", train_args.hidden,
                        "Hidden layers, e.g. 128:sigmoid,32:relu");
  train_cmd->add_option("--optimizer", train_args.optimizer)
      ->check(CLI::IsMember({"adam", "rmsprop"}));
  train_cmd->add_option("--epochs", train_args.epochs);
  train_cmd->add_option("--lr", train_args.lr);
  train_cmd->add_option("--batch", train_args.batch);
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--train-fraction", train_args.train_fraction);
  train_cmd->add_option("--out", train_args.out_path, "Model output path");

  ServeArgs serve_args;
  CLI::App* serve_cmd =
      app.add_subcommand("serve", "Serve a model for encrypted evaluation");
  serve_cmd->add_option("--model", serve_args.model_path)->required();
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--port", serve_args.port,
                        "TCP port; 0 picks a free one");
  serve_cmd->add_option("--credentials", serve_args.credentials_path)
      ->required();
  serve_cmd->add_option("--frac-bits", serve_args.frac_bits);
  serve_cmd->add_option("--int-bits", serve_args.int_bits);
  serve_cmd->add_option("--min-key-bits", serve_args.min_key_bits);
  std::uint64_t serve_shuffle_seed = 0;
  CLI::Option* shuffle_opt =
      serve_cmd->add_option("--shuffle-seed", serve_shuffle_seed,
                            "Seed the activation shuffles (for replays)");

  DiagnoseArgs diag_args;
  CLI::App* diag_cmd = app.add_subcommand(
      "diagnose", "Order two images of one subject via a remote model");
  diag_cmd->add_option("--server", diag_args.server, "host:port");
  diag_cmd->add_option("--uid", diag_args.uid)->required();
  diag_cmd->add_option("--pwd", diag_args.pwd)->required();
  diag_cmd->add_option("--image1", diag_args.image1_path);
  diag_cmd->add_option("--image2", diag_args.image2_path);
  diag_cmd->add_option("--dataset", diag_args.dataset_path);
  diag_cmd->add_option("--subject", diag_args.subject,
                       "Subject id to pick two images for");
  diag_cmd->add_option("--key-bits", diag_args.key_bits);
  diag_cmd->add_option("--frac-bits", diag_args.frac_bits);
  diag_cmd->add_option("--int-bits", diag_args.int_bits);
  std::uint64_t diag_seed = 0;
  CLI::Option* diag_seed_opt = diag_cmd->add_option(
      "--seed", diag_seed, "Seed the client randomness (for replays)");

  SweepArgs sweep_args;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep-precision",
      "Sweep fixed-point fraction bits over the encrypted pipeline");
  sweep_cmd->add_option("--model", sweep_args.model_path)->required();
  sweep_cmd->add_option("--dataset", sweep_args.dataset_path)->required();
  sweep_cmd->add_option("--fl-min", sweep_args.fl_min);
  sweep_cmd->add_option("--fl-max", sweep_args.fl_max);
  sweep_cmd->add_option("--key-bits", sweep_args.key_bits);
  sweep_cmd->add_option("--train-fraction", sweep_args.train_fraction);

  std::string predict_layers = "1024,128,32,2";
  std::size_t predict_key_bits = 1024;
  CLI::App* predict_cmd = app.add_subcommand(
      "predict-cost", "Print the closed-form cost model for a layer stack");
  predict_cmd->add_option("--layers", predict_layers,
                          "Comma-separated layer widths");
  predict_cmd->add_option("--key-bits", predict_key_bits);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*serve_cmd) {
      if (*shuffle_opt) serve_args.shuffle_seed = serve_shuffle_seed;
      return run_serve(serve_args);
    }
    if (*diag_cmd) {
      if (*diag_seed_opt) diag_args.seed = diag_seed;
      return run_diagnose(diag_args);
    }
    if (*sweep_cmd) return run_sweep(sweep_args);
    if (*predict_cmd) return run_predict(predict_layers, predict_key_bits);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
