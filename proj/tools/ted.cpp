#include "ted/app.hpp"

int main(int argc, char** argv) { return ted::run_cli(argc, argv); }
