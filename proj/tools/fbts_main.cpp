#include "fbts/cli.hpp"

int main(int argc, char** argv) { return fbts::cli::dispatch(argc, argv); }
