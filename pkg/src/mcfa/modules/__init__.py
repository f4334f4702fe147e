# We need this file so Python knows it is okay to import modules from this folder. Do not Delete.
