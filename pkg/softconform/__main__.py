"""
python -m softconform module entry point to run via python -m
"""

from . import main


if __name__ == "__main__":
    main()
