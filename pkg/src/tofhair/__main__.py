from tofhair.cli import main

main()
