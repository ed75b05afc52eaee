#include "medkco/cli.hpp"

int main(int argc, char** argv) { return medkco::cli::run(argc, argv); }
