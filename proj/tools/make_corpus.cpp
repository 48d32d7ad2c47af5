#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/synthetic.hpp"

// Writes the bundled demo corpus: tone clips labeled positive, noise clips
// labeled negative, all behind 300 ms of leading silence.

int main(int argc, char** argv) {
    CLI::App app{"synthetic corpus generator"};
    std::string out;
    size_t n_pos = 20, n_neg = 20;
    uint64_t seed = 0;
    int rate = 16000;
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--pos", n_pos, "tone clip count")->capture_default_str();
    app.add_option("--neg", n_neg, "noise clip count")->capture_default_str();
    app.add_option("--sample-rate", rate, "sample rate in Hz")->capture_default_str();
    app.add_option("--seed", seed, "RNG seed")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        const auto records = coughnet::build_corpus(out, n_pos, n_neg, seed, rate);
        std::cout << "clips," << records.size() << "\n";
        std::cout << "manifest," << out << "/manifest.csv\n";
        return 0;
    } catch (const coughnet::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
