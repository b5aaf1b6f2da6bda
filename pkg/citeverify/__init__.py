# citeverify package: verify generated citations against scholarly indexes
__version__ = "0.3.0"
