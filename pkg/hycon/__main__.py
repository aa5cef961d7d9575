from hycon.cli import main

main()
